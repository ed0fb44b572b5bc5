//! Training loop: sample, forward, loss, backward, update.
//!
//! Evaluation points compute the exact full objective and recall@M; their
//! cost is excluded from wall time. The deterministic trace and the wall
//! clock are kept apart so that repeated runs give byte-identical traces.

use std::time::Instant;

use log::warn;
use ndarray::Zip;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::recall_at_m;
use crate::graph::{HoldoutSplit, InteractionGraph, ItemId};
use crate::ledger::{CostLedger, Counts};
use crate::losses::{batch_loss, full_objective, LossSpec};
use crate::model::{EmbeddingModel, Gradients, ModelConfig, USER_BLOCK};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::sampler::{MiniBatch, SamplerConfig, SamplingContext, Strategy};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub sampler: SamplerConfig,
    pub loss: LossSpec,
    pub optim: OptimizerConfig,
    pub model: ModelConfig,
    pub epochs: usize,
    /// Epochs between evaluation points.
    pub eval_every: usize,
    pub eval_m: usize,
    /// L2 penalty on the user table.
    pub weight_decay: f64,
    pub g_cost_multiplier: usize,
    /// Stop after this many evaluation points without a recall improvement.
    pub early_stop_patience: Option<usize>,
    /// Stop at the first evaluation point whose objective is at or below.
    pub target_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sampler: SamplerConfig::default(),
            loss: LossSpec::new(crate::losses::LossKind::Sg),
            optim: OptimizerConfig::default(),
            model: ModelConfig::default(),
            epochs: 10,
            eval_every: 1,
            eval_m: 50,
            weight_decay: 0.0,
            g_cost_multiplier: 1,
            early_stop_patience: None,
            target_loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampler.validate(self.loss.family())?;
        self.loss.validate()?;
        self.optim.validate()?;
        self.model.validate()?;
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("train.eval-every", "must be at least 1"));
        }
        if self.eval_m == 0 {
            return Err(Error::config("eval.m", "must be at least 1"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("train.weight-decay", "must be non-negative"));
        }
        if self.g_cost_multiplier == 0 {
            return Err(Error::config("train.g-cost-multiplier", "must be at least 1"));
        }
        Ok(())
    }
}

/// Held-out pool and per-user held-out items.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub pool: Vec<ItemId>,
    pub by_user: Vec<Vec<ItemId>>,
}

impl From<&HoldoutSplit> for EvalSet {
    fn from(s: &HoldoutSplit) -> Self {
        EvalSet {
            pool: s.test_pool.clone(),
            by_user: s.test_items_by_user(),
        }
    }
}

/// One evaluation point; free of wall-clock values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub epoch: usize,
    pub batches: u64,
    pub train_loss: f64,
    pub recall: Option<f64>,
    /// Largest batch gradient norm since the previous point.
    pub max_grad_norm: f64,
    pub degenerate_batches: u64,
    pub ledger: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRecord {
    pub epoch: usize,
    pub batches: u64,
    /// Cumulative training time, evaluation excluded.
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    pub records: Vec<EvalRecord>,
    pub timing: Vec<TimingRecord>,
    pub stopped_early: bool,
}

impl RunTrace {
    pub fn min_loss(&self) -> Option<&EvalRecord> {
        self.records
            .iter()
            .skip(1)
            .min_by(|a, b| a.train_loss.total_cmp(&b.train_loss))
    }

    /// First evaluation point at or below `target`, with its timing row.
    pub fn first_reaching(&self, target: f64) -> Option<(&EvalRecord, &TimingRecord)> {
        self.records
            .iter()
            .zip(&self.timing)
            .find(|(r, _)| r.epoch > 0 && r.train_loss <= target)
    }

    pub fn to_jsonl(&self) -> String {
        lines(&self.records)
    }

    pub fn timing_jsonl(&self) -> String {
        lines(&self.timing)
    }
}

fn lines<T: Serialize>(rows: &[T]) -> String {
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub loss: f64,
    pub grad_norm: f64,
    pub degenerate: bool,
}

/// Model, optimizer state and gradient buffers of one run.
#[derive(Debug, Clone)]
pub struct Learner {
    pub model: EmbeddingModel,
    pub ledger: CostLedger,
    opt: Optimizer,
    grads: Gradients,
    loss: LossSpec,
    weight_decay: f64,
}

impl Learner {
    pub fn new(cfg: &TrainConfig, graph: &InteractionGraph) -> Result<Self> {
        let vocab = graph.features().map_or(0, |f| f.vocab);
        let mut model = EmbeddingModel::new(&cfg.model, graph.num_users(), graph.num_items(), vocab)?;
        model.set_item_cost_multiplier(cfg.g_cost_multiplier);
        Ok(Self::from_model(cfg, model))
    }

    pub fn from_model(cfg: &TrainConfig, model: EmbeddingModel) -> Self {
        Learner {
            opt: Optimizer::new(cfg.optim, model.params()),
            grads: Gradients::zeros_like(&model),
            model,
            ledger: CostLedger::default(),
            loss: cfg.loss,
            weight_decay: cfg.weight_decay,
        }
    }

    /// Gradient of the batch objective, left in the internal buffers.
    pub fn gradient(&mut self, batch: &MiniBatch, graph: &InteractionGraph) -> Result<StepInfo> {
        let feats = graph.features();
        let acts = self.model.forward(&batch.users, &batch.items, feats)?;
        let bl = batch_loss(&self.loss, batch, &acts)?;
        self.ledger
            .record(batch, acts.evals(), (bl.vec_interactions, bl.mat_interactions))?;
        if !bl.loss.is_finite() {
            return Err(Error::Numerical(format!(
                "batch loss is {} after {} batches",
                bl.loss, self.ledger.batches
            )));
        }
        self.grads.fill_zero();
        self.model
            .backward(&batch.users, &batch.items, feats, &acts, &bl.d_f, &bl.d_g, &mut self.grads)?;
        if self.weight_decay > 0.0 {
            let wd = self.weight_decay;
            Zip::from(&mut self.grads.blocks[USER_BLOCK])
                .and(&self.model.params()[USER_BLOCK])
                .for_each(|g, &p| *g += wd * p);
        }
        let grad_norm = self.grads.norm();
        if !grad_norm.is_finite() {
            return Err(Error::Numerical(format!("non-finite gradient after {} batches", self.ledger.batches)));
        }
        Ok(StepInfo {
            loss: bl.loss,
            grad_norm,
            degenerate: batch.is_degenerate() || bl.skipped > 0,
        })
    }

    pub fn gradients(&self) -> &Gradients {
        &self.grads
    }

    pub fn step(&mut self, batch: &MiniBatch, graph: &InteractionGraph) -> Result<StepInfo> {
        let info = self.gradient(batch, graph)?;
        self.opt.step(self.model.params_mut(), &self.grads.blocks);
        Ok(info)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trace: RunTrace,
    pub model: EmbeddingModel,
    pub ledger: CostLedger,
}

pub fn train(graph: &InteractionGraph, test: Option<&EvalSet>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let ctx = SamplingContext::new(graph, cfg.sampler.clone(), cfg.loss.family())?;
    let mut learner = Learner::new(cfg, graph)?;
    let mut sampler = ctx.seeded_sampler(0);
    let mut trace = RunTrace::default();
    let mut wall = 0.0;
    let mut max_norm = 0.0f64;
    let mut degenerate = 0u64;
    let mut best_recall = f64::NEG_INFINITY;
    let mut stale = 0;

    let evaluate = |learner: &Learner, epoch: usize, max_norm: f64, degenerate: u64| -> Result<EvalRecord> {
        let loss = full_objective(
            &cfg.loss,
            &learner.model,
            graph,
            ctx.marginals(),
            ctx.noise(),
            cfg.sampler.exclude_known_positives,
        )?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("training objective is {loss} at epoch {epoch}")));
        }
        let recall = match test {
            Some(t) => Some(recall_at_m(&learner.model, graph.features(), &t.pool, &t.by_user, cfg.eval_m)?.mean),
            None => None,
        };
        Ok(EvalRecord {
            epoch,
            batches: learner.ledger.batches,
            train_loss: loss,
            recall,
            max_grad_norm: max_norm,
            degenerate_batches: degenerate,
            ledger: learner.ledger.total,
        })
    };

    let push = |trace: &mut RunTrace, rec: EvalRecord, wall: f64| {
        trace.timing.push(TimingRecord {
            epoch: rec.epoch,
            batches: rec.batches,
            wall_seconds: wall,
        });
        trace.records.push(rec);
    };

    push(&mut trace, evaluate(&learner, 0, 0.0, 0)?, 0.0);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        while let Some(batch) = sampler.next_batch() {
            let info = learner.step(&batch, graph)?;
            max_norm = max_norm.max(info.grad_norm);
            if info.degenerate {
                if degenerate == 0 {
                    warn!("degenerate batch: no usable negatives for some positives ({})", batch.strategy);
                }
                degenerate += 1;
            }
        }
        wall += start.elapsed().as_secs_f64();
        learner.ledger.epochs += 1;
        learner.ledger.wall_seconds = wall;
        if epoch % cfg.eval_every != 0 && epoch != cfg.epochs {
            continue;
        }
        let rec = evaluate(&learner, epoch, max_norm, degenerate)?;
        max_norm = 0.0;
        let reached = cfg.target_loss.is_some_and(|t| rec.train_loss <= t);
        let recall = rec.recall;
        push(&mut trace, rec, wall);
        if reached {
            break;
        }
        if let (Some(patience), Some(r)) = (cfg.early_stop_patience, recall) {
            if r > best_recall {
                best_recall = r;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    trace.stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok(TrainOutcome {
        trace,
        ledger: learner.ledger,
        model: learner.model,
    })
}

/// One strategy's row of the speedup table.
#[derive(Debug, Clone, Serialize)]
pub struct SpeedupRow {
    pub strategy: Strategy,
    /// Mean training seconds per iteration.
    pub seconds_per_iteration: f64,
    /// Iterations until the objective first reached the reference.
    pub iterations_to_ref: Option<u64>,
    pub seconds_to_ref: Option<f64>,
    pub per_iteration_speedup: f64,
    pub iteration_speedup: f64,
    pub total_speedup: f64,
    /// Ratio of mean item-function evaluations per batch, baseline over this.
    pub analytic_speedup: f64,
    pub reached: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpeedupReport {
    pub reference_loss: f64,
    pub reference_epochs: usize,
    pub rows: Vec<SpeedupRow>,
}

impl SpeedupReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "strategy,seconds_per_iteration,iterations_to_ref,seconds_to_ref,per_iteration_speedup,iteration_speedup,total_speedup,analytic_speedup,reached\n",
        );
        let opt = |x: Option<String>| x.unwrap_or_else(|| "inf".into());
        for r in &self.rows {
            out += &format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.strategy,
                r.seconds_per_iteration,
                opt(r.iterations_to_ref.map(|x| x.to_string())),
                opt(r.seconds_to_ref.map(|x| x.to_string())),
                r.per_iteration_speedup,
                r.iteration_speedup,
                r.total_speedup,
                r.analytic_speedup,
                r.reached
            );
        }
        out
    }
}

struct RunStats {
    spi: f64,
    it: Option<u64>,
    secs: Option<f64>,
    ng_per_batch: f64,
}

fn run_stats(out: &TrainOutcome, reference: f64) -> RunStats {
    let l = &out.ledger;
    let hit = out.trace.first_reaching(reference);
    RunStats {
        spi: l.wall_seconds / l.batches.max(1) as f64,
        it: hit.map(|(r, _)| r.batches),
        secs: hit.map(|(_, t)| t.wall_seconds),
        ng_per_batch: l.total.n_g as f64 / l.batches.max(1) as f64,
    }
}

/// Reference-loss speedup protocol: IID runs `reference_epochs` epochs and
/// its smallest objective becomes the finish line for every strategy, each
/// allowed up to `max_epochs`.
pub fn speedup_report(
    graph: &InteractionGraph,
    test: Option<&EvalSet>,
    base: &TrainConfig,
    strategies: &[Strategy],
    reference_epochs: usize,
    max_epochs: usize,
) -> Result<SpeedupReport> {
    let mut iid_cfg = base.clone();
    iid_cfg.sampler.strategy = Strategy::Iid;
    iid_cfg.epochs = reference_epochs;
    iid_cfg.eval_every = 1;
    iid_cfg.target_loss = None;
    iid_cfg.early_stop_patience = None;
    let iid = train(graph, test, &iid_cfg)?;
    let reference = iid
        .trace
        .min_loss()
        .map(|r| r.train_loss)
        .ok_or_else(|| Error::Numerical("reference run recorded no loss".into()))?;
    let base_stats = run_stats(&iid, reference);

    let mut rows = Vec::with_capacity(strategies.len());
    for &st in strategies {
        let stats = if st == Strategy::Iid {
            run_stats(&iid, reference)
        } else {
            let mut cfg = base.clone();
            cfg.sampler.strategy = st;
            cfg.epochs = max_epochs;
            cfg.eval_every = 1;
            cfg.target_loss = Some(reference);
            cfg.early_stop_patience = None;
            run_stats(&train(graph, test, &cfg)?, reference)
        };
        let per_it = base_stats.spi / stats.spi;
        let it_ratio = match (base_stats.it, stats.it) {
            (Some(a), Some(b)) => a as f64 / b as f64,
            _ => 0.0,
        };
        rows.push(SpeedupRow {
            strategy: st,
            seconds_per_iteration: stats.spi,
            iterations_to_ref: stats.it,
            seconds_to_ref: stats.secs,
            per_iteration_speedup: per_it,
            iteration_speedup: it_ratio,
            total_speedup: per_it * it_ratio,
            analytic_speedup: base_stats.ng_per_batch / stats.ng_per_batch,
            reached: stats.it.is_some(),
        });
    }
    Ok(SpeedupReport {
        reference_loss: reference,
        reference_epochs,
        rows,
    })
}
