//! Exact appearance probabilities for negatives built by negative sharing.
//!
//! A batch is a uniformly random set of `g` slots out of `N`, where a slot is
//! a stratum (or a single link when strata have size one). Every link lives in
//! exactly one slot and item `v` owns `c_v` slots. The probability that a
//! given set of `n` slots is entirely missed is
//! `h(n) = C(N - n, g) / C(N, g)`; every appearance event for a shared
//! negative reduces to inclusion-exclusion over disjoint slot sets, so its
//! probability is a signed sum of four `h` values regardless of how users were
//! dealt into strata.
//!
//! Dividing each shared negative's target coefficient by its appearance
//! probability makes the batch objective an unbiased estimate of the full
//! objective on any graph, not only in the large-graph limit.

/// `h(n)` for `n = 0..=total`.
#[derive(Debug, Clone)]
pub struct MissTable {
    chosen: usize,
    h: Vec<f64>,
}

impl MissTable {
    pub fn new(total: usize, chosen: usize) -> Self {
        assert!(chosen <= total, "cannot choose {chosen} of {total} slots");
        let mut h = vec![0.0; total + 1];
        h[0] = 1.0;
        for n in 0..total {
            // C(N-n-1, g) / C(N-n, g) = (N-n-g) / (N-n)
            let rem = total - n;
            h[n + 1] = if rem > chosen {
                h[n] * (rem - chosen) as f64 / rem as f64
            } else {
                0.0
            };
        }
        MissTable { chosen, h }
    }

    pub fn chosen(&self) -> usize {
        self.chosen
    }

    #[inline]
    pub fn miss(&self, n: usize) -> f64 {
        self.h.get(n).copied().unwrap_or(0.0)
    }

    /// Probability that user `u` and item `v` both appear in the batch while
    /// `(u, v)` is not a batch positive.
    ///
    /// `linked`: whether `(u, v)` is a training link; `user_other_slots`: the
    /// number of `u`'s links to items other than `v`; `item_slots`: `c_v`.
    #[inline]
    pub fn cell(&self, linked: bool, user_other_slots: usize, item_slots: usize) -> f64 {
        let a = linked as usize;
        let (t, c) = (user_other_slots, item_slots);
        let p = self.miss(a) - self.miss(a + t) - self.miss(c) + self.miss(c + t);
        p.max(0.0)
    }

    /// Probability that a given positive link is in the batch together with
    /// item `v'` while `(u, v')` is not a batch positive (`v'` differs from
    /// the positive's item).
    #[inline]
    pub fn pair(&self, linked: bool, item_slots: usize) -> f64 {
        let a = linked as usize;
        let c = item_slots;
        let p = self.miss(a) - self.miss(a + 1) - self.miss(c) + self.miss(c + 1);
        p.max(0.0)
    }
}
