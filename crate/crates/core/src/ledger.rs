//! Cost accounting in units of user-function, item-function and interaction
//! evaluations.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sampler::{MiniBatch, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Counts {
    pub n_f: u64,
    pub n_g: u64,
    pub n_i_vec: u64,
    pub n_i_mat: u64,
}

impl Counts {
    pub fn interactions(&self) -> u64 {
        self.n_i_vec + self.n_i_mat
    }

    fn add(&mut self, o: &Counts) {
        self.n_f += o.n_f;
        self.n_g += o.n_g;
        self.n_i_vec += o.n_i_vec;
        self.n_i_mat += o.n_i_mat;
    }
}

/// Per-evaluation costs `t_f`, `t_g`, `t_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnitCosts {
    pub t_f: f64,
    pub t_g: f64,
    pub t_i: f64,
}

impl UnitCosts {
    pub fn cost(&self, c: &Counts) -> f64 {
        self.t_f * c.n_f as f64 + self.t_g * c.n_g as f64 + self.t_i * c.interactions() as f64
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CostLedger {
    pub last: Counts,
    pub total: Counts,
    pub batches: u64,
    pub epochs: u64,
    pub wall_seconds: f64,
}

impl CostLedger {
    /// Records one batch's measured evaluations after checking them against
    /// the composition the sampler reported.
    pub fn record(&mut self, batch: &MiniBatch, evals: (usize, usize), interactions: (usize, usize)) -> Result<Counts> {
        let comp = batch.composition();
        let measured = Counts {
            n_f: evals.0 as u64,
            n_g: evals.1 as u64,
            n_i_vec: interactions.0 as u64,
            n_i_mat: interactions.1 as u64,
        };
        let expected = Counts {
            n_f: comp.users as u64,
            n_g: comp.items as u64,
            n_i_vec: comp.vec_interactions as u64,
            n_i_mat: comp.mat_interactions as u64,
        };
        if measured != expected {
            return Err(Error::Numerical(format!(
                "cost ledger audit failed: measured {measured:?}, batch composition {expected:?}"
            )));
        }
        self.last = measured;
        self.total.add(&measured);
        self.batches += 1;
        Ok(measured)
    }
}

/// Per-batch counts for `b` positives with all-distinct nodes.
pub fn table2_counts(strategy: Strategy, b: u64, k: u64, s: u64) -> Counts {
    let bk1 = b * (1 + k);
    match strategy {
        Strategy::Iid => Counts {
            n_f: bk1,
            n_g: bk1,
            n_i_vec: bk1,
            n_i_mat: 0,
        },
        Strategy::Negative => Counts {
            n_f: b,
            n_g: bk1,
            n_i_vec: bk1,
            n_i_mat: 0,
        },
        Strategy::Stratified => Counts {
            n_f: bk1,
            n_g: b / s,
            n_i_vec: bk1,
            n_i_mat: 0,
        },
        Strategy::NegSharing => Counts {
            n_f: b,
            n_g: b,
            n_i_vec: 0,
            n_i_mat: b * b,
        },
        Strategy::StratifiedNs => Counts {
            n_f: b,
            n_g: b / s,
            n_i_vec: 0,
            n_i_mat: b * (b / s),
        },
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CostPrediction {
    pub strategy: Strategy,
    pub counts: Counts,
    pub cost: f64,
}

/// Closed-form batch cost of a strategy; no training involved.
pub fn cost_sim(strategy: Strategy, b: u64, k: u64, s: u64, costs: UnitCosts) -> Result<CostPrediction> {
    if b == 0 {
        return Err(Error::config("sampler.b", "batch size must be positive"));
    }
    if strategy.uses_strata() && (s == 0 || b % s != 0) {
        return Err(Error::config("sampler.s", format!("stratum size {s} does not divide batch size {b}")));
    }
    for (key, t) in [("cost.t-f", costs.t_f), ("cost.t-g", costs.t_g), ("cost.t-i", costs.t_i)] {
        if !(t >= 0.0) {
            return Err(Error::config(key, "unit cost must be non-negative"));
        }
    }
    let counts = table2_counts(strategy, b, k, s);
    Ok(CostPrediction {
        strategy,
        counts,
        cost: costs.cost(&counts),
    })
}

/// Ratio of item-function evaluations, `n_g(baseline) / n_g(strategy)`.
pub fn item_eval_speedup(strategy: Strategy, baseline: Strategy, b: u64, k: u64, s: u64) -> f64 {
    table2_counts(baseline, b, k, s).n_g as f64 / table2_counts(strategy, b, k, s).n_g as f64
}
