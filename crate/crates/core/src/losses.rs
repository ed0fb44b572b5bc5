//! Pointwise and pairwise link losses, batch objective and score gradients.
//!
//! | kind         | family    | term                                          |
//! |--------------|-----------|-----------------------------------------------|
//! | `sg`         | pointwise | `-log σ(x⁺)`, `-λ·log σ(-x⁻)`                   |
//! | `mse`        | pointwise | `(r⁺ - x⁺)²`, `λ·(r⁻ - x⁻)²`                     |
//! | `log-pair`   | pairwise  | `-log σ(γ(x⁺ - x⁻))`                           |
//! | `hinge-pair` | pairwise  | `max(x⁻ - x⁺ + γ, 0)`                          |
//!
//! Every term is multiplied by the link weight the sampler attached, so the
//! batch loss is an unbiased estimate of the full objective.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::distributions::{DiscreteDistribution, Marginals};
use crate::error::{Error, Result};
use crate::graph::{InteractionGraph, ItemId, UserId};
use crate::model::{dot, BatchActivations, EmbeddingModel};
use crate::sampler::{LossFamily, MiniBatch, Negatives};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Sg,
    Mse,
    LogPair,
    HingePair,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Sg, LossKind::Mse, LossKind::LogPair, LossKind::HingePair];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Sg => "sg",
            LossKind::Mse => "mse",
            LossKind::LogPair => "log-pair",
            LossKind::HingePair => "hinge-pair",
        }
    }

    pub fn family(self) -> LossFamily {
        match self {
            LossKind::Sg | LossKind::Mse => LossFamily::Pointwise,
            LossKind::LogPair | LossKind::HingePair => LossFamily::Pairwise,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config("loss.kind", format!("unknown loss {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Weight of the negative term (pointwise).
    pub lambda: f64,
    /// Margin (hinge) or scale (log) of the pairwise term.
    pub gamma: f64,
    pub pos_target: f64,
    pub neg_target: f64,
}

impl LossSpec {
    /// Defaults: `λ = 8` for mse and 128 otherwise, `γ = 0.1` for hinge and
    /// 10 otherwise.
    pub fn new(kind: LossKind) -> Self {
        LossSpec {
            kind,
            lambda: if kind == LossKind::Mse { 8.0 } else { 128.0 },
            gamma: if kind == LossKind::HingePair { 0.1 } else { 10.0 },
            pos_target: 1.0,
            neg_target: 0.0,
        }
    }

    pub fn family(&self) -> LossFamily {
        self.kind.family()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("loss.lambda", "must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::config("loss.gamma", "must be positive"));
        }
        Ok(())
    }

    /// Positive-link term and its derivative; pointwise kinds only.
    #[inline]
    pub fn pos_term(&self, x: f64) -> (f64, f64) {
        match self.kind {
            LossKind::Sg => (softplus(-x), -sigmoid(-x)),
            LossKind::Mse => {
                let r = self.pos_target - x;
                (r * r, -2.0 * r)
            }
            _ => unreachable!("pairwise loss has no pointwise term"),
        }
    }

    /// Negative-link term (without `λ`) and its derivative.
    #[inline]
    pub fn neg_term(&self, x: f64) -> (f64, f64) {
        match self.kind {
            LossKind::Sg => (softplus(x), sigmoid(x)),
            LossKind::Mse => {
                let r = self.neg_target - x;
                (r * r, -2.0 * r)
            }
            _ => unreachable!("pairwise loss has no pointwise term"),
        }
    }

    /// Triplet term and its derivatives with respect to `x⁺` and `x⁻`.
    #[inline]
    pub fn pair_term(&self, xp: f64, xn: f64) -> (f64, f64, f64) {
        match self.kind {
            LossKind::LogPair => {
                let z = self.gamma * (xp - xn);
                let s = self.gamma * sigmoid(-z);
                (softplus(-z), -s, s)
            }
            LossKind::HingePair => {
                let m = xn - xp + self.gamma;
                if m >= 0.0 {
                    (m, -1.0, 1.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
            _ => unreachable!("pointwise loss has no triplet term"),
        }
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Loss value and per-score derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Terms {
    pub loss: f64,
    pub d_pos: Vec<f64>,
    pub d_neg: Vec<f64>,
}

/// `Σ pos_w·ℓ⁺(x⁺) + λ·Σ neg_w·ℓ⁻(x⁻)` with derivatives per score.
pub fn pointwise_terms(
    spec: &LossSpec,
    pos_scores: &[f64],
    pos_weights: &[f64],
    neg_scores: &[f64],
    neg_weights: &[f64],
) -> Result<Terms> {
    if spec.family() != LossFamily::Pointwise {
        return Err(Error::Argument(format!("{} is not a pointwise loss", spec.kind)));
    }
    let mut loss = 0.0;
    let d_pos = pos_scores
        .iter()
        .zip(pos_weights)
        .map(|(&x, &w)| {
            let (l, d) = spec.pos_term(x);
            loss += w * l;
            w * d
        })
        .collect();
    let d_neg = neg_scores
        .iter()
        .zip(neg_weights)
        .map(|(&x, &w)| {
            let (l, d) = spec.neg_term(x);
            loss += spec.lambda * w * l;
            spec.lambda * w * d
        })
        .collect();
    Ok(Terms { loss, d_pos, d_neg })
}

/// `Σ w·ℓ(x⁺, x⁻)` over triplets `(x⁺, x⁻, w)`; `d_pos[i]`/`d_neg[i]` are
/// the derivatives for triplet `i`.
pub fn pairwise_terms(spec: &LossSpec, triplets: &[(f64, f64, f64)]) -> Result<Terms> {
    if spec.family() != LossFamily::Pairwise {
        return Err(Error::Argument(format!("{} is not a pairwise loss", spec.kind)));
    }
    let mut t = Terms {
        loss: 0.0,
        d_pos: Vec::with_capacity(triplets.len()),
        d_neg: Vec::with_capacity(triplets.len()),
    };
    for &(xp, xn, w) in triplets {
        let (l, dp, dn) = spec.pair_term(xp, xn);
        t.loss += w * l;
        t.d_pos.push(w * dp);
        t.d_neg.push(w * dn);
    }
    Ok(t)
}

/// Batch loss with upstream gradients for the model.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub loss: f64,
    pub d_f: Array2<f64>,
    pub d_g: Array2<f64>,
    /// Dot products evaluated one at a time.
    pub vec_interactions: usize,
    /// Cells of the batch score matrix.
    pub mat_interactions: usize,
    /// Positives without any partner (pairwise), skipped.
    pub skipped: usize,
}

/// Accumulates `∂L/∂x` per link into `∂L/∂F` and `∂L/∂G`.
struct Accum {
    d_f: Array2<f64>,
    d_g: Array2<f64>,
}

impl Accum {
    fn new(acts: &BatchActivations) -> Self {
        Accum {
            d_f: Array2::zeros(acts.f.raw_dim()),
            d_g: Array2::zeros(acts.g.raw_dim()),
        }
    }

    #[inline]
    fn add(&mut self, acts: &BatchActivations, r: usize, c: usize, d: f64) {
        if d != 0.0 {
            self.d_f.row_mut(r).scaled_add(d, &acts.g.row(c));
            self.d_g.row_mut(c).scaled_add(d, &acts.f.row(r));
        }
    }
}

pub fn batch_loss(spec: &LossSpec, batch: &MiniBatch, acts: &BatchActivations) -> Result<BatchLoss> {
    match &batch.negatives {
        Negatives::Explicit(_) => explicit_loss(spec, batch, acts),
        Negatives::DenseGrid(_) => grid_loss(spec, batch, acts),
    }
}

fn explicit_loss(spec: &LossSpec, batch: &MiniBatch, acts: &BatchActivations) -> Result<BatchLoss> {
    let Negatives::Explicit(negs) = &batch.negatives else { unreachable!() };
    let pos_scores: Vec<f64> = batch.pos_links.iter().map(|&(r, c)| dot(acts.f.row(r), acts.g.row(c))).collect();
    let mut acc = Accum::new(acts);
    let mut skipped = 0;
    let (loss, vec_interactions) = match spec.family() {
        LossFamily::Pointwise => {
            let neg_scores: Vec<f64> = negs
                .iter()
                .map(|n| dot(acts.f.row(n.user_slot), acts.g.row(n.item_slot)))
                .collect();
            let neg_weights: Vec<f64> = negs.iter().map(|n| n.weight).collect();
            let t = pointwise_terms(spec, &pos_scores, &batch.pos_weights, &neg_scores, &neg_weights)?;
            for (&(r, c), &d) in batch.pos_links.iter().zip(&t.d_pos) {
                acc.add(acts, r, c, d);
            }
            for (n, &d) in negs.iter().zip(&t.d_neg) {
                acc.add(acts, n.user_slot, n.item_slot, d);
            }
            (t.loss, pos_scores.len() + neg_scores.len())
        }
        LossFamily::Pairwise => {
            let pairing = batch
                .pairing
                .as_ref()
                .ok_or_else(|| Error::Argument("pairwise loss needs a paired batch".into()))?;
            let mut triplets = Vec::new();
            let mut index = Vec::new();
            let mut evaluated = pos_scores.len();
            for (i, partners) in pairing.iter().enumerate() {
                if partners.is_empty() {
                    skipped += 1;
                    continue;
                }
                let (r, c) = batch.pos_links[i];
                for p in partners {
                    let xn = dot(acts.f.row(r), acts.g.row(p.item_slot));
                    evaluated += 1;
                    triplets.push((pos_scores[i], xn, p.weight));
                    index.push((r, c, p.item_slot));
                }
            }
            let t = pairwise_terms(spec, &triplets)?;
            for (k, &(r, c, j)) in index.iter().enumerate() {
                acc.add(acts, r, c, t.d_pos[k]);
                acc.add(acts, r, j, t.d_neg[k]);
            }
            (t.loss, evaluated)
        }
    };
    Ok(BatchLoss {
        loss,
        d_f: acc.d_f,
        d_g: acc.d_g,
        vec_interactions,
        mat_interactions: 0,
        skipped,
    })
}

fn grid_loss(spec: &LossSpec, batch: &MiniBatch, acts: &BatchActivations) -> Result<BatchLoss> {
    let Negatives::DenseGrid(grid) = &batch.negatives else { unreachable!() };
    let scores = acts.f.dot(&acts.g.t());
    let mut dmat = Array2::<f64>::zeros(scores.raw_dim());
    let mut loss = 0.0;
    let mut skipped = 0;
    match spec.family() {
        LossFamily::Pointwise => {
            for (&(r, c), &w) in batch.pos_links.iter().zip(&batch.pos_weights) {
                let (l, d) = spec.pos_term(scores[[r, c]]);
                loss += w * l;
                dmat[[r, c]] += w * d;
            }
            for r in 0..grid.rows {
                for c in 0..grid.cols {
                    let w = grid.weight(r, c);
                    if w != 0.0 {
                        let (l, d) = spec.neg_term(scores[[r, c]]);
                        loss += spec.lambda * w * l;
                        dmat[[r, c]] += spec.lambda * w * d;
                    }
                }
            }
        }
        LossFamily::Pairwise => {
            let pairing = batch
                .pairing
                .as_ref()
                .ok_or_else(|| Error::Argument("pairwise loss needs a paired batch".into()))?;
            for (i, partners) in pairing.iter().enumerate() {
                if partners.is_empty() {
                    skipped += 1;
                    continue;
                }
                let (r, c) = batch.pos_links[i];
                let xp = scores[[r, c]];
                for p in partners {
                    let (l, dp, dn) = spec.pair_term(xp, scores[[r, p.item_slot]]);
                    loss += p.weight * l;
                    dmat[[r, c]] += p.weight * dp;
                    dmat[[r, p.item_slot]] += p.weight * dn;
                }
            }
        }
    }
    Ok(BatchLoss {
        loss,
        d_f: dmat.dot(&acts.g),
        d_g: dmat.t().dot(&acts.f),
        vec_interactions: 0,
        mat_interactions: grid.rows * grid.cols,
        skipped,
    })
}

/// Exact full objective over every user and item:
/// pointwise `(1/L)·Σ_links ℓ⁺ + λ·Σ_u Σ_v P_d(u)·P_n(v)·ℓ⁻(u, v)`,
/// pairwise `(1/L)·Σ_links Σ_v' P_n(v')·ℓ(u, v, v')`.
///
/// With `exclude_known_positives` the negative sum skips training links.
pub fn full_objective(
    spec: &LossSpec,
    model: &EmbeddingModel,
    graph: &InteractionGraph,
    marginals: &Marginals,
    noise: &DiscreteDistribution,
    exclude_known_positives: bool,
) -> Result<f64> {
    let items: Vec<ItemId> = (0..graph.num_items() as ItemId).collect();
    let g = model.embed_items(&items, graph.features())?;
    let l = graph.num_links() as f64;
    let pn = noise.probs();
    let mut total = 0.0;
    let mut row = vec![0.0; items.len()];
    for u in 0..graph.num_users() as UserId {
        let pu = marginals.user.prob(u as usize);
        let linked = graph.user_items(u);
        if pu == 0.0 && linked.is_empty() {
            continue;
        }
        let f = model.embed_users(&[u])?;
        let f = f.row(0);
        for (v, x) in row.iter_mut().enumerate() {
            *x = dot(f, g.row(v));
        }
        match spec.family() {
            LossFamily::Pointwise => {
                let mut neg = 0.0;
                let mut next = linked.iter().peekable();
                for (v, &x) in row.iter().enumerate() {
                    let is_link = next.peek().is_some_and(|&&w| w as usize == v);
                    if is_link {
                        next.next();
                        total += spec.pos_term(x).0 / l;
                        if exclude_known_positives {
                            continue;
                        }
                    }
                    neg += pn[v] * spec.neg_term(x).0;
                }
                total += spec.lambda * pu * neg;
            }
            LossFamily::Pairwise => {
                for &v in linked {
                    let xp = row[v as usize];
                    let mut s = 0.0;
                    for (w, &xn) in row.iter().enumerate() {
                        if exclude_known_positives && graph.has_link(u, w as ItemId) {
                            continue;
                        }
                        s += pn[w] * spec.pair_term(xp, xn).0;
                    }
                    total += s / l;
                }
            }
        }
    }
    Ok(total)
}
