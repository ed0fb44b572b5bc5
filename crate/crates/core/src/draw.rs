//! Sources of randomness for samplers.
//!
//! Samplers consume randomness only through [`Draw`]: uniform indices and
//! categorical draws. [`RngDraw`] is the production source. [`Exhaustive`]
//! walks every possible sequence of choices with its exact probability, which
//! turns any sampler into an enumerable outcome space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distributions::DiscreteDistribution;

pub trait Draw {
    /// Uniform index in `0..n`; `n > 0`.
    fn index(&mut self, n: usize) -> usize;

    /// Outcome of `dist`.
    fn categorical(&mut self, dist: &DiscreteDistribution) -> usize;
}

impl<D: Draw + ?Sized> Draw for &mut D {
    #[inline]
    fn index(&mut self, n: usize) -> usize {
        (**self).index(n)
    }

    #[inline]
    fn categorical(&mut self, dist: &DiscreteDistribution) -> usize {
        (**self).categorical(dist)
    }
}

/// Seeded ChaCha8 stream; alias-table categorical draws.
#[derive(Debug, Clone)]
pub struct RngDraw {
    rng: ChaCha8Rng,
}

impl RngDraw {
    /// Independent stream `stream` under `seed`.
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngDraw { rng }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

impl Draw for RngDraw {
    #[inline]
    fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    #[inline]
    fn categorical(&mut self, dist: &DiscreteDistribution) -> usize {
        dist.sample(&mut self.rng)
    }
}

#[derive(Debug)]
struct Choice {
    pick: usize,
    /// (outcome, probability), zero-probability outcomes omitted.
    options: Vec<(usize, f64)>,
}

/// Depth-first walker over all choice sequences of a deterministic program.
#[derive(Debug, Default)]
pub struct Exhaustive {
    script: Vec<Choice>,
    pos: usize,
    prob: f64,
}

impl Exhaustive {
    fn choose(&mut self, options: impl FnOnce() -> Vec<(usize, f64)>) -> usize {
        if self.pos == self.script.len() {
            let options = options();
            assert!(!options.is_empty(), "choice with no support");
            self.script.push(Choice { pick: 0, options });
        }
        let c = &self.script[self.pos];
        let (outcome, p) = c.options[c.pick];
        self.prob *= p;
        self.pos += 1;
        outcome
    }

    fn advance(&mut self) -> bool {
        self.script.truncate(self.pos);
        while let Some(last) = self.script.last_mut() {
            if last.pick + 1 < last.options.len() {
                last.pick += 1;
                return true;
            }
            self.script.pop();
        }
        false
    }
}

impl Draw for Exhaustive {
    fn index(&mut self, n: usize) -> usize {
        let p = 1.0 / n as f64;
        self.choose(|| (0..n).map(|i| (i, p)).collect())
    }

    fn categorical(&mut self, dist: &DiscreteDistribution) -> usize {
        self.choose(|| {
            dist.probs()
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(i, &p)| (i, p))
                .collect()
        })
    }
}

/// Runs `program` once per distinct choice sequence and hands each result to
/// `visit` with its probability. Returns the number of outcomes visited.
///
/// `program` must be deterministic given the choices it receives.
pub fn for_each_outcome<T>(
    mut program: impl FnMut(&mut Exhaustive) -> T,
    mut visit: impl FnMut(f64, T),
) -> usize {
    let mut src = Exhaustive::default();
    let mut count = 0;
    loop {
        src.pos = 0;
        src.prob = 1.0;
        let out = program(&mut src);
        visit(src.prob, out);
        count += 1;
        if !src.advance() {
            return count;
        }
    }
}
