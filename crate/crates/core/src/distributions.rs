//! Categorical node distributions with O(1) alias-method sampling.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{InteractionGraph, ItemId};

/// Walker/Vose alias table.
///
/// Built with the two-worklist method; both worklists are FIFO in ascending
/// id order, so construction is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<u32>,
}

impl AliasTable {
    /// `probs` must be non-negative and sum to one.
    pub fn new(probs: &[f64]) -> Self {
        let n = probs.len();
        let mut scaled: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
        let mut prob = vec![1.0; n];
        let mut alias: Vec<u32> = (0..n as u32).collect();
        let mut small: VecDeque<usize> = (0..n).filter(|&i| scaled[i] < 1.0).collect();
        let mut large: VecDeque<usize> = (0..n).filter(|&i| scaled[i] >= 1.0).collect();

        while let (Some(&s), Some(&l)) = (small.front(), large.front()) {
            small.pop_front();
            prob[s] = scaled[s];
            alias[s] = l as u32;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            if scaled[l] < 1.0 {
                large.pop_front();
                small.push_back(l);
            }
        }
        // leftovers on either list carry (up to rounding) exactly one unit
        AliasTable { prob, alias }
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let i = rng.random_range(0..self.prob.len());
        if rng.random::<f64>() < self.prob[i] {
            i
        } else {
            self.alias[i] as usize
        }
    }

    /// Outcome probabilities implied by the table.
    pub fn reconstruct(&self) -> Vec<f64> {
        let n = self.prob.len() as f64;
        let mut out: Vec<f64> = self.prob.clone();
        for (i, (&p, &a)) in self.prob.iter().zip(&self.alias).enumerate() {
            if a as usize != i {
                out[a as usize] += 1.0 - p;
            }
        }
        out.iter_mut().for_each(|x| *x /= n);
        out
    }
}

/// Normalized categorical distribution over node ids.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    probs: Vec<f64>,
    table: AliasTable,
}

impl DiscreteDistribution {
    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Domain("distribution over zero outcomes".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Domain("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Domain("all weights are zero".into()));
        }
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let table = AliasTable::new(&probs);
        Ok(DiscreteDistribution { probs, table })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::from_weights(&vec![1.0; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, i: usize) -> f64 {
        self.probs[i]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn table(&self) -> &AliasTable {
        &self.table
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.table.sample(rng)
    }
}

/// Empirical data marginals over users and items.
#[derive(Debug, Clone)]
pub struct Marginals {
    pub user: DiscreteDistribution,
    pub item: DiscreteDistribution,
}

/// `P_d(u) = deg(u) / |links|`, `P_d(v) = deg(v) / |links|`.
pub fn build_marginals(graph: &InteractionGraph) -> Result<Marginals> {
    if graph.num_links() == 0 {
        return Err(Error::Domain("graph has no links".into()));
    }
    let to_f = |d: Vec<usize>| d.into_iter().map(|x| x as f64).collect::<Vec<_>>();
    Ok(Marginals {
        user: DiscreteDistribution::from_weights(&to_f(graph.user_degrees()))?,
        item: DiscreteDistribution::from_weights(&to_f(graph.item_degrees()))?,
    })
}

/// Negative (noise) item distribution.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum NoiseSpec {
    /// Proportional to item degree; identical to the item data marginal.
    #[default]
    DegreeUnigram,
    Uniform,
    /// Proportional to `degree^alpha`.
    UnigramPower(f64),
}

impl FromStr for NoiseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "degree-unigram" | "unigram" => Ok(NoiseSpec::DegreeUnigram),
            "uniform" => Ok(NoiseSpec::Uniform),
            _ => match s.strip_prefix("unigram-power") {
                Some(rest) => {
                    let alpha = rest.trim_start_matches([':', '=']);
                    let alpha = if alpha.is_empty() { 0.75 } else {
                        alpha
                            .parse()
                            .map_err(|_| Error::config("sampler.noise", format!("bad exponent in {s:?}")))?
                    };
                    Ok(NoiseSpec::UnigramPower(alpha))
                }
                None => Err(Error::config("sampler.noise", format!("unknown noise kind {s:?}"))),
            },
        }
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseSpec::DegreeUnigram => f.write_str("degree-unigram"),
            NoiseSpec::Uniform => f.write_str("uniform"),
            NoiseSpec::UnigramPower(a) => write!(f, "unigram-power:{a}"),
        }
    }
}

pub fn build_noise(graph: &InteractionGraph, spec: NoiseSpec) -> Result<DiscreteDistribution> {
    let degrees = graph.item_degrees();
    let weights: Vec<f64> = match spec {
        NoiseSpec::DegreeUnigram => degrees.iter().map(|&d| d as f64).collect(),
        NoiseSpec::Uniform => vec![1.0; graph.num_items()],
        NoiseSpec::UnigramPower(alpha) => {
            if !(alpha >= 0.0 && alpha.is_finite()) {
                return Err(Error::config("sampler.noise-alpha", format!("exponent {alpha} must be >= 0")));
            }
            degrees.iter().map(|&d| (d as f64).powf(alpha)).collect()
        }
    };
    DiscreteDistribution::from_weights(&weights)
}

/// Importance weight `P_n(v) / P_d(v)` for a negative item that was drawn
/// from the data marginal instead of the noise distribution.
pub fn neg_weight(v: ItemId, noise: &DiscreteDistribution, data_item: &DiscreteDistribution) -> Result<f64> {
    let pd = data_item.prob(v as usize);
    if pd <= 0.0 {
        return Err(Error::Domain(format!("item {v} has zero data mass; weight undefined")));
    }
    Ok(noise.prob(v as usize) / pd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn graph_with_item_degrees(degrees: &[usize]) -> InteractionGraph {
        let users = *degrees.iter().max().unwrap();
        let links = degrees
            .iter()
            .enumerate()
            .flat_map(|(v, &d)| (0..d as u32).map(move |u| (u, v as u32)));
        InteractionGraph::from_links(users, degrees.len(), links).unwrap()
    }

    #[test]
    fn item_marginal_normalizes() {
        let g = graph_with_item_degrees(&[1, 2, 1]);
        let m = build_marginals(&g).unwrap();
        assert_eq!(m.item.probs(), &[0.25, 0.5, 0.25]);
    }

    #[test]
    fn complete_two_by_two_user_marginal() {
        let g = InteractionGraph::from_links(2, 2, [(0, 0), (0, 1), (1, 0), (1, 1)]).unwrap();
        assert_eq!(build_marginals(&g).unwrap().user.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn empty_graph_is_domain_error() {
        let g = InteractionGraph::from_links(2, 2, []).unwrap();
        assert!(matches!(build_marginals(&g), Err(Error::Domain(_))));
    }

    #[test]
    fn noise_variants() {
        let g = graph_with_item_degrees(&[1, 2, 4, 1]);
        assert_eq!(build_noise(&g, NoiseSpec::Uniform).unwrap().probs(), &[0.25; 4]);
        let m = build_marginals(&g).unwrap();
        assert_eq!(build_noise(&g, NoiseSpec::DegreeUnigram).unwrap().probs(), m.item.probs());

        let g = graph_with_item_degrees(&[1, 2, 4]);
        let p = build_noise(&g, NoiseSpec::UnigramPower(0.75)).unwrap();
        let raw = [1.0, 2f64.powf(0.75), 4f64.powf(0.75)];
        let z: f64 = raw.iter().sum();
        for (a, b) in p.probs().iter().zip(raw) {
            assert!((a - b / z).abs() < 1e-15);
        }
        assert!(matches!(
            build_noise(&g, NoiseSpec::UnigramPower(-1.0)),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn noise_kind_parsing() {
        assert_eq!("uniform".parse::<NoiseSpec>().unwrap(), NoiseSpec::Uniform);
        assert_eq!("unigram-power:0.5".parse::<NoiseSpec>().unwrap(), NoiseSpec::UnigramPower(0.5));
        assert!("zipf".parse::<NoiseSpec>().is_err());
    }

    #[test]
    fn weights_are_one_under_degree_unigram() {
        let g = graph_with_item_degrees(&[3, 1, 5, 2]);
        let m = build_marginals(&g).unwrap();
        let pn = build_noise(&g, NoiseSpec::DegreeUnigram).unwrap();
        for v in 0..4 {
            assert_eq!(neg_weight(v, &pn, &m.item).unwrap(), 1.0);
        }
    }

    #[test]
    fn uniform_noise_weights() {
        let g = graph_with_item_degrees(&[1, 3]);
        let m = build_marginals(&g).unwrap();
        let pn = build_noise(&g, NoiseSpec::Uniform).unwrap();
        assert!((neg_weight(0, &pn, &m.item).unwrap() - 2.0).abs() < 1e-15);
        assert!((neg_weight(1, &pn, &m.item).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_mass_item_weight_undefined() {
        let g = graph_with_item_degrees(&[2, 0, 1]);
        let m = build_marginals(&g).unwrap();
        let pn = build_noise(&g, NoiseSpec::Uniform).unwrap();
        assert!(neg_weight(1, &pn, &m.item).is_err());
    }

    #[test]
    fn reweighting_matches_noise_expectation_by_enumeration() {
        // E_{P_d}[w h] == E_{P_n}[h] on a 3-item toy
        let g = graph_with_item_degrees(&[1, 4, 2]);
        let m = build_marginals(&g).unwrap();
        let h = [0.3, -1.7, 2.5];
        for spec in [NoiseSpec::Uniform, NoiseSpec::UnigramPower(0.5), NoiseSpec::UnigramPower(2.0)] {
            let pn = build_noise(&g, spec).unwrap();
            let lhs: f64 = (0..3)
                .map(|v| m.item.prob(v) * neg_weight(v as u32, &pn, &m.item).unwrap() * h[v])
                .sum();
            let rhs: f64 = (0..3).map(|v| pn.prob(v) * h[v]).sum();
            assert!((lhs - rhs).abs() < 1e-14, "{spec}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn single_outcome_always_zero() {
        let d = DiscreteDistribution::from_weights(&[3.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..1000).all(|_| d.sample(&mut rng) == 0));
    }

    #[test]
    fn monte_carlo_frequencies() {
        let d = DiscreteDistribution::from_weights(&[0.5, 0.25, 0.25]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 1_000_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[d.sample(&mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip(d.probs()) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.003);
        }
        // chi-square with 2 dof, 99.9th percentile = 13.8155
        let chi2: f64 = counts
            .iter()
            .zip(d.probs())
            .map(|(&c, &p)| (c as f64 - n as f64 * p).powi(2) / (n as f64 * p))
            .sum();
        assert!(chi2 < 13.8155, "chi2 {chi2}");
    }

    proptest::proptest! {
        #[test]
        fn alias_reconstruction_exact(weights in proptest::collection::vec(0.0f64..10.0, 1..60)) {
            proptest::prop_assume!(weights.iter().sum::<f64>() > 0.0);
            let d = DiscreteDistribution::from_weights(&weights).unwrap();
            let back = d.table().reconstruct();
            for (a, b) in back.iter().zip(d.probs()) {
                proptest::prop_assert!((a - b).abs() <= 1e-12);
            }
            proptest::prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
