//! Central finite-difference check of the analytic batch gradient for every
//! item function x loss x strategy combination.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::graph::{FeatureBag, InteractionGraph, ItemFeatures};
use crate::losses::{batch_loss, LossKind, LossSpec};
use crate::model::{ItemFnKind, ModelConfig};
use crate::sampler::{MiniBatch, SamplerConfig, SamplingContext, Strategy};
use crate::trainer::{Learner, TrainConfig};

/// Deliberate corruption of the analytic gradient, to prove the checker
/// catches errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negate the gradient of the last parameter block.
    SignFlip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckSpec {
    pub dim: usize,
    pub hidden: usize,
    pub eps: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for GradcheckSpec {
    fn default() -> Self {
        GradcheckSpec {
            dim: 3,
            hidden: 8,
            eps: 1e-5,
            tolerance: 1e-4,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckRow {
    pub item_fn: String,
    pub loss: String,
    pub strategy: Strategy,
    pub max_rel_error: f64,
    /// Parameter block holding the largest error.
    pub worst_block: String,
    pub passed: bool,
}

/// Entries where both gradients are below this are compared absolutely.
const FLOOR: f64 = 1e-7;

/// `|a - n| / max(|a|, |n|, FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Six users, eight items, token bags over a vocabulary of ten.
pub fn fixture(seed: u64) -> InteractionGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut links = Vec::new();
    for u in 0..6u32 {
        for v in 0..8u32 {
            if (u + v) % 3 == 0 || rng.random_bool(0.25) {
                links.push((u, v));
            }
        }
    }
    let bags = (0..8)
        .map(|_| FeatureBag::from_tokens((0..4).map(|_| rng.random_range(0..10))))
        .collect();
    InteractionGraph::from_links(6, 8, links)
        .and_then(|g| g.with_features(ItemFeatures { vocab: 10, bags }))
        .expect("fixture is valid")
}

fn sampler_for(strategy: Strategy, graph: &InteractionGraph, seed: u64) -> SamplerConfig {
    let b = graph.num_links().min(8) / 2 * 2;
    SamplerConfig {
        strategy,
        b: b.max(1),
        k: 2,
        s: if b >= 2 { 2 } else { 1 },
        seed,
        ..SamplerConfig::default()
    }
}

fn batch_objective(learner: &Learner, spec: &LossSpec, batch: &MiniBatch, graph: &InteractionGraph) -> Result<f64> {
    let acts = learner.model.forward(&batch.users, &batch.items, graph.features())?;
    Ok(batch_loss(spec, batch, &acts)?.loss)
}

/// Checks one combination on `graph`.
pub fn check_case(
    graph: &InteractionGraph,
    item_fn: ItemFnKind,
    loss: LossKind,
    strategy: Strategy,
    spec: &GradcheckSpec,
) -> Result<GradcheckRow> {
    let mut loss_spec = LossSpec::new(loss);
    // Keep margins away from the kink so the finite difference is defined.
    loss_spec.gamma = if loss == LossKind::HingePair { 0.37 } else { 1.3 };
    loss_spec.lambda = 3.0;
    let cfg = TrainConfig {
        sampler: sampler_for(strategy, graph, spec.seed),
        loss: loss_spec,
        model: ModelConfig {
            dim: spec.dim,
            item_fn,
            hidden: spec.hidden,
            token_dim: 4,
            seed: spec.seed,
            init_scale: 0.5,
        },
        ..TrainConfig::default()
    };
    let ctx = SamplingContext::new(graph, cfg.sampler.clone(), loss_spec.family())?;
    let batch = ctx
        .seeded_sampler(spec.seed)
        .next_batch()
        .expect("graph has links");
    let mut learner = Learner::new(&cfg, graph)?;
    learner.gradient(&batch, graph)?;
    let mut analytic = learner.gradients().blocks.clone();
    if spec.fault == Some(Fault::SignFlip) {
        if let Some(last) = analytic.last_mut() {
            last.mapv_inplace(|x| -x);
        }
    }
    let names = learner.model.block_names();
    let (mut worst, mut worst_block) = (0.0f64, names[0]);
    for (bi, block) in analytic.iter().enumerate() {
        for idx in 0..block.len() {
            let (r, c) = (idx / block.ncols(), idx % block.ncols());
            let x0 = learner.model.params()[bi][[r, c]];
            learner.model.params_mut()[bi][[r, c]] = x0 + spec.eps;
            let up = batch_objective(&learner, &loss_spec, &batch, graph)?;
            learner.model.params_mut()[bi][[r, c]] = x0 - spec.eps;
            let down = batch_objective(&learner, &loss_spec, &batch, graph)?;
            learner.model.params_mut()[bi][[r, c]] = x0;
            let numeric = (up - down) / (2.0 * spec.eps);
            let e = relative_error(block[[r, c]], numeric);
            if e > worst {
                worst = e;
                worst_block = names[bi];
            }
        }
    }
    Ok(GradcheckRow {
        item_fn: item_fn.to_string(),
        loss: loss.to_string(),
        strategy,
        max_rel_error: worst,
        worst_block: worst_block.to_string(),
        passed: worst < spec.tolerance,
    })
}

/// Every supported combination on the default fixture.
pub fn run_gradcheck(spec: &GradcheckSpec) -> Result<Vec<GradcheckRow>> {
    let graph = fixture(spec.seed);
    let mut rows = Vec::new();
    for item_fn in [ItemFnKind::IdTable, ItemFnKind::LinearBag, ItemFnKind::MlpBag] {
        for loss in LossKind::ALL {
            for strategy in Strategy::ALL {
                if loss.family() == crate::sampler::LossFamily::Pairwise && !strategy.supports_pairwise() {
                    continue;
                }
                rows.push(check_case(&graph, item_fn, loss, strategy, spec)?);
            }
        }
    }
    Ok(rows)
}
