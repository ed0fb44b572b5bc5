//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --release --test acceptance`; pass criterion numbers
//! (`-- 3 4`) to run a subset.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use cfsample::distributions::DiscreteDistribution;
use cfsample::draw::{for_each_outcome, Draw};
use cfsample::eval::recall_from_scores;
use cfsample::gradcheck::{run_gradcheck, GradcheckSpec};
use cfsample::graph::{split_holdout, synth_graph, InteractionGraph, ItemId, SplitSpec, SynthSpec};
use cfsample::ledger::{item_eval_speedup, Counts};
use cfsample::losses::{LossKind, LossSpec};
use cfsample::model::{EmbeddingModel, ItemFnKind};
use cfsample::sampler::{SamplerConfig, SamplingContext, Strategy};
use cfsample::trainer::{speedup_report, train, EvalSet, Learner, TrainConfig};

type Check = fn() -> Result<String, String>;

fn main() -> ExitCode {
    let checks: [(u32, &str, Check); 10] = [
        (1, "batch composition audit", composition_audit),
        (2, "analytic item-eval speedups", analytic_speedups),
        (3, "unbiased gradients, exact enumeration", exact_enumeration),
        (4, "unbiased gradients, Monte Carlo", monte_carlo),
        (5, "finite-difference gradient checks", gradient_checks),
        (6, "alias sampler fidelity", alias_fidelity),
        (7, "desk-scale speedup", desk_speedup),
        (8, "recall vs negatives per positive", recall_trend),
        (9, "recall@M oracle", recall_oracle),
        (10, "determinism", determinism),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check) in checks {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {id:>2} PASS {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL {name}: {detail} ({secs:.1}s)");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn config(strategy: Strategy, b: usize, k: usize, s: usize) -> SamplerConfig {
    SamplerConfig {
        strategy,
        b,
        k,
        s,
        ..SamplerConfig::default()
    }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_cfsample")
}

// ---------------------------------------------------------------------------
// 1

/// Uniform draws come back as 0 (identity shuffles); every categorical
/// distribution is walked by its own cursor starting at `start`, so draws
/// never repeat and never hit the first `start` ids.
struct Scripted {
    start: usize,
    cursors: HashMap<usize, usize>,
}

impl Draw for Scripted {
    fn index(&mut self, _n: usize) -> usize {
        0
    }

    fn categorical(&mut self, dist: &DiscreteDistribution) -> usize {
        let c = self.cursors.entry(dist as *const _ as usize).or_insert(self.start);
        let out = *c % dist.len();
        *c += 1;
        out
    }
}

fn measured_counts(graph: &InteractionGraph, cfg: SamplerConfig) -> Result<Counts, String> {
    let ctx = SamplingContext::new(graph, cfg, LossKind::Sg.family()).map_err(|e| e.to_string())?;
    let mut sampler = ctx.sampler(Scripted {
        start: 512,
        cursors: HashMap::new(),
    });
    let batch = sampler.next_batch().ok_or("no batch")?;
    let model = EmbeddingModel::new(
        &cfsample::model::ModelConfig {
            dim: 2,
            ..Default::default()
        },
        graph.num_users(),
        graph.num_items(),
        0,
    )
    .map_err(|e| e.to_string())?;
    let mut learner = Learner::from_model(&TrainConfig::default(), model);
    learner.gradient(&batch, graph).map_err(|e| e.to_string())?;
    Ok(learner.ledger.last)
}

fn composition_audit() -> Result<String, String> {
    // link i joins user i and item i; strata fixture gives item v users 4v..4v+3
    let matching = InteractionGraph::from_links(5632, 5632, (0..5632).map(|i| (i, i))).unwrap();
    let strata = InteractionGraph::from_links(5632, 1408, (0..5632).map(|u| (u, u / 4))).unwrap();
    let want = [
        (Strategy::Iid, &matching, (5632, 5632, 5632, 0)),
        (Strategy::Negative, &matching, (512, 5632, 5632, 0)),
        (Strategy::Stratified, &strata, (5632, 128, 5632, 0)),
        (Strategy::NegSharing, &matching, (512, 512, 0, 512 * 512)),
        (Strategy::StratifiedNs, &strata, (512, 128, 0, 512 * 128)),
    ];
    let mut rows = Vec::new();
    for (st, graph, (n_f, n_g, n_i_vec, n_i_mat)) in want {
        let got = measured_counts(graph, config(st, 512, 10, 4))?;
        let want = Counts {
            n_f,
            n_g,
            n_i_vec,
            n_i_mat,
        };
        ensure(got == want, || format!("{st}: measured {got:?}, expected {want:?}"))?;
        rows.push(format!("{st} {}/{}/{}", got.n_f, got.n_g, got.interactions()));
    }
    Ok(rows.join(", "))
}

// ---------------------------------------------------------------------------
// 2

fn analytic_speedups() -> Result<String, String> {
    let out = Command::new(bin())
        .args(["cost-sim", "--cost.t-f=0", "--cost.t-i=0", "--cost.t-g=1"])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("cost-sim failed: {}", String::from_utf8_lossy(&out.stderr))
    })?;
    let text = String::from_utf8(out.stdout).map_err(|e| e.to_string())?;
    let mut cost = HashMap::new();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        cost.insert(cols[0].to_string(), cols[5].parse::<f64>().map_err(|e| e.to_string())?);
    }
    let mut parts = Vec::new();
    for (st, want) in [("neg-sharing", 11.0), ("stratified", 44.0), ("stratified-ns", 44.0)] {
        for base in ["iid", "negative"] {
            let ratio = cost[base] / cost[st];
            ensure(ratio == want, || format!("{st} vs {base}: {ratio}, expected {want}"))?;
        }
        parts.push(format!("{st} {want}x"));
    }
    for (st, want) in [
        (Strategy::NegSharing, 11.0),
        (Strategy::Stratified, 44.0),
        (Strategy::StratifiedNs, 44.0),
    ] {
        for base in [Strategy::Iid, Strategy::Negative] {
            let r = item_eval_speedup(st, base, 512, 10, 4);
            ensure(r == want, || format!("library ratio {st} vs {base}: {r}"))?;
        }
    }
    Ok(parts.join(", "))
}

// ---------------------------------------------------------------------------
// 3 and 4

/// Small graph on which every strategy can realize every negative cell.
fn fixture_graph(st: Strategy) -> InteractionGraph {
    if st == Strategy::StratifiedNs {
        InteractionGraph::from_links(3, 4, (0..3).flat_map(|u| (0..4).map(move |v| (u, v)))).unwrap()
    } else {
        let links = [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 3), (2, 0), (2, 2), (2, 3)];
        InteractionGraph::from_links(3, 4, links).unwrap()
    }
}

fn unbiased_cases() -> Vec<(Strategy, SamplerConfig, LossKind)> {
    let mut cases = Vec::new();
    for kind in [LossKind::Sg, LossKind::Mse] {
        for (st, b, k, s) in [
            (Strategy::Iid, 2, 1, 1),
            (Strategy::Negative, 2, 2, 1),
            (Strategy::Stratified, 4, 1, 2),
            (Strategy::NegSharing, 3, 1, 1),
            (Strategy::StratifiedNs, 4, 1, 2),
        ] {
            cases.push((st, config(st, b, k, s), kind));
        }
    }
    for kind in [LossKind::LogPair, LossKind::HingePair] {
        for (st, b, k, s) in [
            (Strategy::Negative, 2, 2, 1),
            (Strategy::NegSharing, 3, 1, 1),
            (Strategy::StratifiedNs, 4, 1, 2),
        ] {
            cases.push((st, config(st, b, k, s), kind));
        }
    }
    cases
}

fn fixture_params(seed: u64) -> (Array2<f64>, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = Array2::from_shape_fn((3, 2), |_| rng.random_range(-1.0..1.0));
    let items = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
    (users, items)
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gradient of the full objective by direct summation over every user-item
/// cell, written against the loss definitions rather than the library.
fn brute_force_gradient(graph: &InteractionGraph, spec: &LossSpec, p: &(Array2<f64>, Array2<f64>)) -> Vec<f64> {
    let (fu, gv) = p;
    let (nu, ni) = (graph.num_users(), graph.num_items());
    let l = graph.num_links() as f64;
    let pd: Vec<f64> = (0..nu).map(|u| graph.user_degree(u as u32) as f64 / l).collect();
    let pn: Vec<f64> = (0..ni).map(|v| graph.item_degree(v as u32) as f64 / l).collect();
    let x = |u: usize, v: usize| fu[[u, 0]] * gv[[v, 0]] + fu[[u, 1]] * gv[[v, 1]];
    let mut du = Array2::<f64>::zeros((nu, 2));
    let mut dv = Array2::<f64>::zeros((ni, 2));
    let mut add = |u: usize, v: usize, c: f64| {
        for j in 0..2 {
            du[[u, j]] += c * gv[[v, j]];
            dv[[v, j]] += c * fu[[u, j]];
        }
    };
    for u in 0..nu {
        for v in 0..ni {
            let linked = graph.has_link(u as u32, v as u32);
            let xuv = x(u, v);
            match spec.kind {
                LossKind::Sg | LossKind::Mse => {
                    let (dpos, dneg) = if spec.kind == LossKind::Sg {
                        (-sig(-xuv), sig(xuv))
                    } else {
                        (-2.0 * (spec.pos_target - xuv), -2.0 * (spec.neg_target - xuv))
                    };
                    if linked {
                        add(u, v, dpos / l);
                    }
                    add(u, v, spec.lambda * pd[u] * pn[v] * dneg);
                }
                LossKind::LogPair | LossKind::HingePair => {
                    if !linked {
                        continue;
                    }
                    for w in 0..ni {
                        let xuw = x(u, w);
                        let (dp, dn) = if spec.kind == LossKind::LogPair {
                            let z = spec.gamma * (xuv - xuw);
                            (-spec.gamma * sig(-z), spec.gamma * sig(-z))
                        } else if spec.gamma - xuv + xuw >= 0.0 {
                            (-1.0, 1.0)
                        } else {
                            (0.0, 0.0)
                        };
                        add(u, v, pn[w] * dp / l);
                        add(u, w, pn[w] * dn / l);
                    }
                }
            }
        }
    }
    du.iter().chain(dv.iter()).copied().collect()
}

fn fixture_learner(spec: LossSpec, params: &(Array2<f64>, Array2<f64>)) -> Learner {
    let model = EmbeddingModel::from_blocks(ItemFnKind::IdTable, vec![params.0.clone(), params.1.clone()]).unwrap();
    let cfg = TrainConfig {
        loss: spec,
        ..TrainConfig::default()
    };
    Learner::from_model(&cfg, model)
}

fn flat_gradient(learner: &Learner) -> Vec<f64> {
    learner.gradients().blocks.iter().flat_map(|b| b.iter().copied()).collect()
}

fn exact_enumeration() -> Result<String, String> {
    let params = fixture_params(17);
    let mut worst = 0.0f64;
    let mut outcomes = 0;
    let cases = unbiased_cases();
    for (st, cfg, kind) in &cases {
        let graph = fixture_graph(*st);
        let spec = LossSpec::new(*kind);
        let oracle = brute_force_gradient(&graph, &spec, &params);
        let ctx = SamplingContext::new(&graph, cfg.clone(), kind.family()).map_err(|e| e.to_string())?;
        let mut learner = fixture_learner(spec, &params);
        let mut expected = vec![0.0; oracle.len()];
        let mut failure = None;
        outcomes += for_each_outcome(
            |d| ctx.sampler(d).next_batch().unwrap(),
            |p, batch| {
                if let Err(e) = learner.gradient(&batch, &graph) {
                    failure = Some(e.to_string());
                }
                for (e, g) in expected.iter_mut().zip(flat_gradient(&learner)) {
                    *e += p * g;
                }
            },
        );
        if let Some(e) = failure {
            return Err(format!("{st}/{kind:?}: {e}"));
        }
        let err = expected
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        ensure(err <= 1e-10, || format!("{st}/{kind:?}: max componentwise error {err:e}"))?;
        worst = worst.max(err);
    }
    Ok(format!(
        "{} strategy/loss cases, {outcomes} enumerated batches, max error {worst:.1e} (tol 1e-10)",
        cases.len()
    ))
}

fn monte_carlo() -> Result<String, String> {
    const BATCHES: usize = 100_000;
    let params = fixture_params(17);
    let mut worst_z = 0.0f64;
    let mut comparisons = 0;
    let cases = unbiased_cases();
    for (i, (st, cfg, kind)) in cases.iter().enumerate() {
        let graph = fixture_graph(*st);
        let spec = LossSpec::new(*kind);
        let oracle = brute_force_gradient(&graph, &spec, &params);
        let cfg = SamplerConfig {
            seed: 1000 + i as u64,
            ..cfg.clone()
        };
        let ctx = SamplingContext::new(&graph, cfg, kind.family()).map_err(|e| e.to_string())?;
        let mut sampler = ctx.seeded_sampler(0);
        let mut learner = fixture_learner(spec, &params);
        let mut sum = vec![0.0; oracle.len()];
        let mut sum_sq = vec![0.0; oracle.len()];
        let mut n = 0usize;
        while n < BATCHES {
            let Some(batch) = sampler.next_batch() else { continue };
            learner.gradient(&batch, &graph).map_err(|e| e.to_string())?;
            for (j, g) in flat_gradient(&learner).into_iter().enumerate() {
                sum[j] += g;
                sum_sq[j] += g * g;
            }
            n += 1;
        }
        let n = n as f64;
        for j in 0..oracle.len() {
            let mean = sum[j] / n;
            let var = (sum_sq[j] / n - mean * mean).max(0.0) * n / (n - 1.0);
            let se = (var / n).sqrt();
            let diff = (mean - oracle[j]).abs();
            comparisons += 1;
            if se == 0.0 {
                ensure(diff <= 1e-12, || format!("{st}/{kind:?} component {j}: constant estimate off by {diff:e}"))?;
                continue;
            }
            let z = diff / se;
            ensure(z <= 4.0, || {
                format!(
                    "{st}/{kind:?} component {j}: mean {mean:.6e} vs {:.6e}, {z:.2} standard errors",
                    oracle[j]
                )
            })?;
            worst_z = worst_z.max(z);
        }
    }
    Ok(format!(
        "{} cases x {BATCHES} batches, {comparisons} components, worst deviation {worst_z:.2} SE (tol 4)",
        cases.len()
    ))
}

// ---------------------------------------------------------------------------
// 5

fn gradient_checks() -> Result<String, String> {
    let spec = GradcheckSpec::default();
    ensure(spec.eps == 1e-5 && spec.tolerance == 1e-4, || "unexpected check settings".into())?;
    let rows = run_gradcheck(&spec).map_err(|e| e.to_string())?;
    let worst = rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    if let Some(bad) = rows.iter().find(|r| !r.passed || !(r.max_rel_error < 1e-4)) {
        return Err(format!(
            "{}/{}/{}: relative error {:e} in {}",
            bad.item_fn, bad.loss, bad.strategy, bad.max_rel_error, bad.worst_block
        ));
    }
    Ok(format!("{} item_fn x loss x strategy cases, max relative error {worst:.1e}", rows.len()))
}

// ---------------------------------------------------------------------------
// 6

fn alias_fidelity() -> Result<String, String> {
    const DRAWS: usize = 1_000_000;
    let weights: Vec<f64> = (1..=100).map(|i| (i as f64).powf(-1.5)).collect();
    let total: f64 = weights.iter().sum();
    let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let dist = DiscreteDistribution::from_weights(&weights).map_err(|e| e.to_string())?;
    let rebuilt = dist.table().reconstruct();
    let recon = rebuilt
        .iter()
        .zip(&probs)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(recon <= 1e-12, || format!("reconstruction error {recon:e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut counts = vec![0u64; probs.len()];
    for _ in 0..DRAWS {
        counts[dist.sample(&mut rng)] += 1;
    }
    let stat: f64 = counts
        .iter()
        .zip(&probs)
        .map(|(&o, &p)| {
            let e = p * DRAWS as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let critical = ChiSquared::new((probs.len() - 1) as f64)
        .map_err(|e| e.to_string())?
        .inverse_cdf(0.999);
    ensure(stat <= critical, || format!("chi-square {stat:.1} above {critical:.1}"))?;
    Ok(format!(
        "chi-square {stat:.1} <= {critical:.1} (99 dof), reconstruction error {recon:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// 7

const SPEEDUP_BATCH: usize = 64;
const SPEEDUP_K: usize = 5;
const SPEEDUP_LR: f64 = 0.01;
const SPEEDUP_INIT: f64 = 0.3;
const ITEM_COST_MULTIPLIER: usize = 10;

fn speedup_config(seed: u64, multiplier: usize) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.sampler.b = SPEEDUP_BATCH;
    cfg.sampler.k = SPEEDUP_K;
    cfg.sampler.seed = seed;
    cfg.optim.lr = SPEEDUP_LR;
    cfg.model.item_fn = ItemFnKind::MlpBag;
    cfg.model.hidden = 256;
    cfg.model.init_scale = SPEEDUP_INIT;
    cfg.model.seed = seed;
    cfg.g_cost_multiplier = multiplier;
    cfg
}

fn seconds_per_iteration(graph: &InteractionGraph, cfg: &TrainConfig) -> Result<f64, String> {
    let mut cfg = cfg.clone();
    cfg.sampler.strategy = Strategy::Iid;
    cfg.epochs = 3;
    cfg.eval_every = 3;
    let out = train(graph, None, &cfg).map_err(|e| e.to_string())?;
    Ok(out.ledger.wall_seconds / out.ledger.batches as f64)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn desk_speedup() -> Result<String, String> {
    let strategies = [
        Strategy::Iid,
        Strategy::Stratified,
        Strategy::NegSharing,
        Strategy::StratifiedNs,
    ];
    let mut strat = Vec::new();
    let mut strat_ns = Vec::new();
    let mut ns_iters = Vec::new();
    let mut item_share = Vec::new();
    for seed in 1..=3u64 {
        let graph = synth_graph(&SynthSpec::new(200, 300, 6000, 1.0, seed)).map_err(|e| e.to_string())?;

        // item-function time against everything else, from two IID runs
        let t1 = seconds_per_iteration(&graph, &speedup_config(seed, 1))?;
        let tm = seconds_per_iteration(&graph, &speedup_config(seed, ITEM_COST_MULTIPLIER))?;
        let per_item = (tm - t1) / (ITEM_COST_MULTIPLIER - 1) as f64;
        let rest = (t1 - per_item).max(f64::MIN_POSITIVE);
        item_share.push(per_item * ITEM_COST_MULTIPLIER as f64 / rest);

        let report = speedup_report(&graph, None, &speedup_config(seed, ITEM_COST_MULTIPLIER), &strategies, 30, 90)
            .map_err(|e| e.to_string())?;
        let row = |st: Strategy| report.rows.iter().find(|r| r.strategy == st).unwrap();
        strat.push(row(Strategy::Stratified).total_speedup);
        strat_ns.push(row(Strategy::StratifiedNs).total_speedup);
        let ns = row(Strategy::NegSharing);
        let iid = row(Strategy::Iid);
        ns_iters.push(match (ns.iterations_to_ref, iid.iterations_to_ref) {
            (Some(a), Some(b)) => a as f64 / b as f64,
            _ => f64::INFINITY,
        });
    }
    let share = median(item_share.clone());
    let (s, sn, ni) = (median(strat.clone()), median(strat_ns.clone()), median(ns_iters.clone()));
    let detail = format!(
        "item/rest time {share:.1}x; total speedup stratified {s:.2} {strat:.2?}, stratified-ns {sn:.2} {strat_ns:.2?}; \
         neg-sharing iterations {ni:.2} {ns_iters:.2?} of IID"
    );
    ensure(share >= 10.0, || format!("item function not dominant: {detail}"))?;
    ensure(s >= 3.0 && sn >= 3.0 && ni <= 0.7, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 8

fn recall_trend() -> Result<String, String> {
    let ks = [1usize, 5, 10];
    let mut table = Vec::new();
    for seed in 1..=3u64 {
        let graph = synth_graph(&SynthSpec::new(1000, 1500, 30000, 1.0, seed)).map_err(|e| e.to_string())?;
        let split = split_holdout(&graph, SplitSpec {
            test_item_fraction: 0.2,
            seed,
        })
        .map_err(|e| e.to_string())?;
        let test = EvalSet::from(&split);
        let mut row = Vec::new();
        for &k in &ks {
            let mut cfg = TrainConfig::default();
            cfg.sampler.strategy = Strategy::Negative;
            cfg.sampler.b = 128;
            cfg.sampler.k = k;
            cfg.sampler.seed = seed;
            cfg.optim.lr = 0.03;
            cfg.model.item_fn = ItemFnKind::LinearBag;
            cfg.model.init_scale = 0.3;
            cfg.model.seed = seed;
            cfg.epochs = 20;
            cfg.eval_every = 20;
            let out = train(&split.train, Some(&test), &cfg).map_err(|e| e.to_string())?;
            row.push(out.trace.records.last().unwrap().recall.unwrap());
        }
        table.push(row);
    }
    let mean = |i: usize| table.iter().map(|r| r[i]).sum::<f64>() / table.len() as f64;
    let diminishing = table.iter().filter(|r| r[2] - r[1] < r[1] - r[0]).count();
    let detail = format!(
        "mean recall@50 k=1 {:.4}, k=5 {:.4}, k=10 {:.4}; diminishing gain in {diminishing}/3 seeds",
        mean(0),
        mean(1),
        mean(2)
    );
    ensure(mean(2) >= mean(0) && diminishing >= 2, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 9

fn brute_force_recall(scores: &[f64], pool: &[ItemId], held: &[ItemId], m: usize) -> f64 {
    let mut ranked: Vec<(f64, ItemId)> = scores.iter().copied().zip(pool.iter().copied()).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let hits = ranked.iter().take(m).filter(|(_, v)| held.contains(v)).count();
    hits as f64 / held.len() as f64
}

fn recall_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..50 {
        let n = rng.random_range(1..40usize);
        let mut ids: Vec<ItemId> = (0..200).collect();
        ids.shuffle(&mut rng);
        let pool = ids[..n].to_vec();
        // coarse scores force ties
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(-4i32..4)) * 0.25).collect();
        let held_n = rng.random_range(1..=n);
        let mut held = pool.clone();
        held.shuffle(&mut rng);
        held.truncate(held_n);
        let mut prev = 0.0;
        for m in 1..=n + 2 {
            let got = recall_from_scores(&scores, &pool, &held, m);
            let want = brute_force_recall(&scores, &pool, &held, m);
            ensure(got == want, || format!("instance {case}, M={m}: {got} vs {want}"))?;
            ensure(got >= prev, || format!("instance {case}: recall fell from {prev} to {got} at M={m}"))?;
            prev = got;
        }
        ensure(prev == 1.0, || format!("instance {case}: full cutoff recall {prev}"))?;
    }
    Ok("50 random instances match the brute-force ranking; monotone in M".into())
}

// ---------------------------------------------------------------------------
// 10

fn train_into(dir: &Path, overrides: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(bin())
        .arg("train")
        .args(overrides)
        .arg(format!("--output.dir={}", dir.display()))
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("train failed: {}", String::from_utf8_lossy(&out.stderr))
    })?;
    std::fs::read(dir.join("trace.jsonl")).map_err(|e| e.to_string())
}

fn determinism() -> Result<String, String> {
    let runs: [&[&str]; 3] = [
        &["--train.epochs=3"],
        &["--train.epochs=2", "--sampler.strategy=neg-sharing", "--model.item-fn=mlp-bag", "--loss.kind=log-pair"],
        &["--train.epochs=2", "--sampler.strategy=stratified", "--model.item-fn=linear-bag", "--sampler.seed=5"],
    ];
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    for (i, overrides) in runs.iter().enumerate() {
        let a = train_into(&tmp.path().join(format!("{i}a")), overrides)?;
        let b = train_into(&tmp.path().join(format!("{i}b")), overrides)?;
        ensure(!a.is_empty() && a == b, || format!("trace differs for {overrides:?}"))?;
    }
    Ok(format!("{} configurations, byte-identical trace.jsonl on rerun", runs.len()))
}
