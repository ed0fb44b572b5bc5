//! Desk-scale synthetic data with planted low-rank preferences.
//!
//! Generator:
//! 1. Users, items and tokens get latent factors with i.i.d. `N(0, 1/rank)`
//!    entries.
//! 2. Item degrees follow a continuous power law `p(x) ∝ x^-exponent`
//!    evaluated at evenly spaced quantiles, fitted so the degrees sum to
//!    `target_links` and never exceed `num_users`; rounding preserves the
//!    total exactly. Degrees are assigned to items in random order.
//! 3. Item `v` picks its `deg(v)` users without replacement with
//!    probability proportional to `exp(signal * <p_u, q_v>)` (Gumbel top-k).
//! 4. When `vocab > 0`, item `v` draws `bag_len` tokens from
//!    `softmax(topic_sharpness * <q_v, z_t>)`, so item content carries the
//!    same latent signal as the links.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{FeatureBag, InteractionGraph, ItemFeatures};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_users: usize,
    pub num_items: usize,
    pub target_links: usize,
    pub degree_exponent: f64,
    pub seed: u64,
    pub rank: usize,
    pub signal: f64,
    pub vocab: usize,
    pub bag_len: usize,
    pub topic_sharpness: f64,
}

impl SynthSpec {
    pub fn new(num_users: usize, num_items: usize, target_links: usize, degree_exponent: f64, seed: u64) -> Self {
        SynthSpec {
            num_users,
            num_items,
            target_links,
            degree_exponent,
            seed,
            rank: 8,
            signal: 6.0,
            vocab: 200,
            bag_len: 30,
            topic_sharpness: 6.0,
        }
    }
}

fn quantile(q: f64, lo: f64, hi: f64, alpha: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    if (alpha - 1.0).abs() < 1e-9 {
        lo * (hi / lo).powf(q)
    } else {
        let e = 1.0 - alpha;
        (lo.powf(e) + q * (hi.powf(e) - lo.powf(e))).powf(1.0 / e)
    }
}

fn quantiles(n: usize, lo: f64, hi: f64, alpha: f64) -> Vec<f64> {
    (0..n)
        .map(|i| quantile((i as f64 + 0.5) / n as f64, lo, hi, alpha))
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64, target: f64) -> f64 {
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Integer power-law degree sequence (ascending) summing exactly to `total`.
pub(crate) fn power_law_degrees(n: usize, max_deg: usize, total: usize, alpha: f64) -> Vec<usize> {
    let mu = total as f64 / n as f64;
    let cap = max_deg as f64;
    let real = if mu >= cap {
        vec![cap; n]
    } else if mu <= 1.0 {
        vec![mu; n]
    } else if mean(&quantiles(n, 1.0, cap, alpha)) >= mu {
        let hi = bisect(1.0, cap, |h| mean(&quantiles(n, 1.0, h, alpha)), mu);
        quantiles(n, 1.0, hi, alpha)
    } else {
        let lo = bisect(1.0, cap, |l| mean(&quantiles(n, l, cap, alpha)), mu);
        quantiles(n, lo, cap, alpha)
    };

    let scale = total as f64 / real.iter().sum::<f64>();
    let real: Vec<f64> = real.iter().map(|x| (x * scale).min(cap)).collect();
    let mut deg: Vec<usize> = real.iter().map(|x| x.floor() as usize).collect();
    let mut remaining = total - deg.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let fa = real[a] - real[a].floor();
        let fb = real[b] - real[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    while remaining > 0 {
        let before = remaining;
        for &i in &order {
            if remaining == 0 {
                break;
            }
            if deg[i] < max_deg {
                deg[i] += 1;
                remaining -= 1;
            }
        }
        assert!(remaining < before, "degree budget exceeds capacity");
    }
    deg
}

fn gaussian_rows(rng: &mut ChaCha8Rng, rows: usize, rank: usize) -> Vec<Vec<f64>> {
    let sd = 1.0 / (rank as f64).sqrt();
    (0..rows)
        .map(|_| (0..rank).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn synth_graph(spec: &SynthSpec) -> Result<InteractionGraph> {
    let SynthSpec {
        num_users,
        num_items,
        target_links,
        ..
    } = *spec;
    if num_users == 0 || num_items == 0 {
        return Err(Error::Argument("synthetic graph needs users and items".into()));
    }
    if target_links > num_users * num_items {
        return Err(Error::Argument(format!(
            "{target_links} links do not fit in a {num_users}x{num_items} graph"
        )));
    }
    if spec.degree_exponent < 0.0 || !spec.degree_exponent.is_finite() {
        return Err(Error::Argument("degree exponent must be finite and non-negative".into()));
    }
    let rank = spec.rank.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let user_f = gaussian_rows(&mut rng, num_users, rank);
    let item_f = gaussian_rows(&mut rng, num_items, rank);
    let token_f = gaussian_rows(&mut rng, spec.vocab, rank);

    let mut degrees = power_law_degrees(num_items, num_users, target_links, spec.degree_exponent);
    degrees.shuffle(&mut rng);

    let mut links = Vec::with_capacity(target_links);
    let mut keys: Vec<(f64, u32)> = Vec::with_capacity(num_users);
    for (v, &d) in degrees.iter().enumerate() {
        if d == 0 {
            continue;
        }
        keys.clear();
        for (u, pu) in user_f.iter().enumerate() {
            let unif: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            let gumbel = -(-unif.ln()).ln();
            keys.push((spec.signal * dot(pu, &item_f[v]) + gumbel, u as u32));
        }
        if d < num_users {
            keys.select_nth_unstable_by(d, |a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        }
        links.extend(keys[..d].iter().map(|&(_, u)| (u, v as u32)));
    }
    let graph = InteractionGraph::from_links(num_users, num_items, links)?;
    if spec.vocab == 0 {
        return Ok(graph);
    }

    let mut bags = Vec::with_capacity(num_items);
    for qv in &item_f {
        let logits: Vec<f64> = token_f.iter().map(|z| spec.topic_sharpness * dot(qv, z)).collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let pick = WeightedIndex::new(&weights).expect("softmax weights are positive");
        bags.push(FeatureBag::from_tokens(
            (0..spec.bag_len.max(1)).map(|_| pick.sample(&mut rng) as u32),
        ));
    }
    graph.with_features(ItemFeatures {
        vocab: spec.vocab,
        bags,
    })
}
