//! `cfsample` command-line interface.
//!
//! Every subcommand takes `--config FILE` followed by any number of
//! `--key=value` overrides; see [`RunConfig`] for the keys.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::config::{DataSource, RunConfig};
use crate::distributions::{build_marginals, DiscreteDistribution};
use crate::error::{Error, Result};
use crate::eval::recall_at_m;
use crate::gradcheck::{run_gradcheck, GradcheckSpec};
use crate::graph::{
    ingest_features, ingest_links, split_holdout, synth_graph, write_features, write_links, HoldoutSplit,
    InteractionGraph,
};
use crate::ledger::{cost_sim, item_eval_speedup};
use crate::model::{load_checkpoint, save_checkpoint};
use crate::sampler::{Composition, Negatives, SamplingContext, Strategy};
use crate::trainer::{speedup_report, train, EvalSet};

#[derive(Debug, Parser)]
#[command(name = "cfsample", version, about = "Mini-batch sampling strategies for collaborative filtering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a link (and feature) file and write it back normalized.
    Ingest(ConfigArgs),
    /// Hold out a random fraction of items and write train/test files.
    Split(ConfigArgs),
    /// Generate a synthetic planted-factor graph.
    Synth(ConfigArgs),
    /// Train a model and write trace, summary and checkpoint.
    Train(ConfigArgs),
    /// recall@M of a checkpoint on the held-out pool.
    Eval(ConfigArgs),
    /// Reference-loss speedup of each strategy against IID.
    SpeedupReport(ConfigArgs),
    /// Closed-form per-batch cost of every strategy.
    CostSim(ConfigArgs),
    /// Finite-difference check of all gradient paths.
    Gradcheck(ConfigArgs),
    /// Dump sampled batches and test negative frequencies.
    SampleAudit(ConfigArgs),
}

#[derive(Debug, clap::Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides, e.g. `--sampler.strategy=neg-sharing`.
    #[arg(allow_hyphen_values = true, trailing_var_arg = true, value_name = "--KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(p) = &self.config {
            cfg.apply_file(p)?;
        }
        cfg.apply_overrides(&self.overrides)?;
        Ok(cfg)
    }
}

/// Parses arguments, runs the subcommand and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest(a) => cmd_ingest(&a.resolve()?),
        Command::Split(a) => cmd_split(&a.resolve()?),
        Command::Synth(a) => cmd_synth(&a.resolve()?),
        Command::Train(a) => cmd_train(&a.resolve()?),
        Command::Eval(a) => cmd_eval(&a.resolve()?),
        Command::SpeedupReport(a) => cmd_speedup_report(&a.resolve()?),
        Command::CostSim(a) => cmd_cost_sim(&a.resolve()?),
        Command::Gradcheck(a) => cmd_gradcheck(&a.resolve()?),
        Command::SampleAudit(a) => cmd_sample_audit(&a.resolve()?),
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(path, std::io::Error::other(e))
}

/// Loads the configured graph, from files or the synthetic generator.
pub fn load_graph(cfg: &RunConfig) -> Result<InteractionGraph> {
    match cfg.data_source()? {
        DataSource::Synth => synth_graph(&cfg.synth()?),
        DataSource::File => {
            let links = cfg
                .links_path()
                .ok_or_else(|| Error::config("data.links", "required when data.source = file"))?;
            let g = ingest_links(&links, cfg.num_users()?, cfg.num_items()?).map_err(|e| match e {
                Error::Io { source, .. } => Error::config("data.links", format!("{}: {source}", links.display())),
                other => other,
            })?;
            match cfg.features_path() {
                None => Ok(g),
                Some(fp) => {
                    let f = ingest_features(&fp, g.num_items(), None).map_err(|e| match e {
                        Error::Io { source, .. } => Error::config("data.features", format!("{}: {source}", fp.display())),
                        other => other,
                    })?;
                    g.with_features(f)
                }
            }
        }
    }
}

fn load_split(cfg: &RunConfig) -> Result<HoldoutSplit> {
    split_holdout(&load_graph(cfg)?, cfg.split()?)
}

fn describe(g: &InteractionGraph) -> String {
    format!("{} users, {} items, {} links", g.num_users(), g.num_items(), g.num_links())
}

fn write_graph(dir: &Path, stem: &str, g: &InteractionGraph) -> Result<()> {
    write_links(g, dir.join(format!("{stem}.tsv")))?;
    if let Some(f) = g.features() {
        write_features(f, dir.join(format!("{stem}.features.tsv")))?;
    }
    Ok(())
}

fn cmd_ingest(cfg: &RunConfig) -> Result<()> {
    let g = load_graph(cfg)?;
    let dir = out_dir(cfg)?;
    write_graph(&dir, "links", &g)?;
    println!("{}", describe(&g));
    Ok(())
}

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let g = synth_graph(&cfg.synth()?)?;
    let dir = out_dir(cfg)?;
    write_graph(&dir, "links", &g)?;
    println!("{}", describe(&g));
    Ok(())
}

fn cmd_split(cfg: &RunConfig) -> Result<()> {
    let split = load_split(cfg)?;
    let dir = out_dir(cfg)?;
    write_graph(&dir, "train", &split.train)?;
    let test: String = split.test_links.iter().map(|(u, v)| format!("{u}\t{v}\n")).collect();
    write(&dir.join("test.tsv"), &test)?;
    let pool: String = split.test_pool.iter().map(|v| format!("{v}\n")).collect();
    write(&dir.join("pool.txt"), &pool)?;
    println!(
        "train: {}; test pool {} items, {} held-out links",
        describe(&split.train),
        split.test_pool.len(),
        split.test_links.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct SummaryRow {
    epoch: usize,
    batches: u64,
    train_loss: f64,
    recall: Option<f64>,
    max_grad_norm: f64,
    wall_seconds: f64,
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let tc = cfg.train()?;
    let split = load_split(cfg)?;
    let test = EvalSet::from(&split);
    let dir = out_dir(cfg)?;
    write(&dir.join("config.resolved"), &cfg.resolved())?;
    let out = train(&split.train, Some(&test), &tc)?;
    write(&dir.join("trace.jsonl"), &out.trace.to_jsonl())?;
    write(&dir.join("timing.jsonl"), &out.trace.timing_jsonl())?;
    let path = dir.join("summary.csv");
    let mut w = csv_writer(&path)?;
    for (r, t) in out.trace.records.iter().zip(&out.trace.timing) {
        w.serialize(SummaryRow {
            epoch: r.epoch,
            batches: r.batches,
            train_loss: r.train_loss,
            recall: r.recall,
            max_grad_norm: r.max_grad_norm,
            wall_seconds: t.wall_seconds,
        })
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    save_checkpoint(&out.model, &dir.join("model.ckpt"))?;
    let last = out.trace.records.last().expect("initial record");
    println!(
        "epoch {} loss {:.6} recall@{} {:.4} ({} batches, {:.2}s)",
        last.epoch,
        last.train_loss,
        tc.eval_m,
        last.recall.unwrap_or(f64::NAN),
        out.ledger.batches,
        out.ledger.wall_seconds
    );
    Ok(())
}

fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let ckpt = cfg.checkpoint_path().unwrap_or_else(|| dir.join("model.ckpt"));
    let model = load_checkpoint(&ckpt)?;
    let split = load_split(cfg)?;
    if model.num_users() != split.train.num_users() {
        return Err(Error::config("eval.checkpoint", "checkpoint was trained on a different graph"));
    }
    let test = EvalSet::from(&split);
    let m = cfg.eval_m()?;
    let rep = recall_at_m(&model, split.train.features(), &test.pool, &test.by_user, m)?;
    let path = dir.join("recall.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["user_id", "recall"]).map_err(csv_err(&path))?;
    for (u, r) in &rep.per_user {
        w.write_record([u.to_string(), r.to_string()]).map_err(csv_err(&path))?;
    }
    w.write_record(["mean".to_string(), rep.mean.to_string()]).map_err(csv_err(&path))?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    println!("recall@{m} {:.6} over {} users", rep.mean, rep.per_user.len());
    Ok(())
}

fn cmd_speedup_report(cfg: &RunConfig) -> Result<()> {
    let strategies = cfg.speedup_strategies()?;
    let (ref_epochs, max_epochs) = cfg.speedup_epochs()?;
    let base = cfg.train()?;
    let split = load_split(cfg)?;
    let test = EvalSet::from(&split);
    let names: Vec<_> = strategies.iter().map(|s| s.name()).collect();
    println!("strategies: {}", names.join(","));
    let rep = speedup_report(&split.train, Some(&test), &base, &strategies, ref_epochs, max_epochs)?;
    let dir = out_dir(cfg)?;
    write(&dir.join("config.resolved"), &cfg.resolved())?;
    let csv = rep.to_csv();
    write(&dir.join("speedup.csv"), &csv)?;
    println!("reference loss {:.6} (iid, {} epochs)", rep.reference_loss, rep.reference_epochs);
    print!("{csv}");
    Ok(())
}

#[derive(Serialize)]
struct CostRow {
    strategy: Strategy,
    n_f: u64,
    n_g: u64,
    n_i_vec: u64,
    n_i_mat: u64,
    cost: f64,
    item_speedup_vs_iid: f64,
}

fn cmd_cost_sim(cfg: &RunConfig) -> Result<()> {
    let s = cfg.sampler()?;
    let costs = cfg.unit_costs()?;
    let (b, k, st) = (s.b as u64, s.k as u64, s.s as u64);
    let mut w = csv::Writer::from_writer(std::io::stdout());
    for strategy in Strategy::ALL {
        let p = cost_sim(strategy, b, k, st, costs)?;
        w.serialize(CostRow {
            strategy,
            n_f: p.counts.n_f,
            n_g: p.counts.n_g,
            n_i_vec: p.counts.n_i_vec,
            n_i_mat: p.counts.n_i_mat,
            cost: p.cost,
            item_speedup_vs_iid: item_eval_speedup(strategy, Strategy::Iid, b, k, st),
        })
        .map_err(|e| Error::io("<stdout>", std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| Error::io("<stdout>", e))
}

fn cmd_gradcheck(cfg: &RunConfig) -> Result<()> {
    let spec = GradcheckSpec {
        dim: cfg.model()?.dim.min(4),
        fault: cfg.gradcheck_fault()?,
        ..GradcheckSpec::default()
    };
    let rows = run_gradcheck(&spec)?;
    println!("item_fn,loss,strategy,max_rel_error,worst_block,passed");
    let mut failed = Vec::new();
    for r in &rows {
        println!("{},{},{},{:.3e},{},{}", r.item_fn, r.loss, r.strategy, r.max_rel_error, r.worst_block, r.passed);
        if !r.passed {
            failed.push(format!("{}/{}/{} in block {}", r.item_fn, r.loss, r.strategy, r.worst_block));
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "gradient check failed (tolerance {:e}): {}",
            spec.tolerance,
            failed.join("; ")
        )))
    }
}

#[derive(Serialize)]
struct AuditLine<'a> {
    batch: usize,
    strategy: Strategy,
    composition: Composition,
    users: &'a [u32],
    items: &'a [u32],
    pos_links: Vec<(u32, u32)>,
    neg_links: Vec<(u32, u32)>,
}

/// Goodness of fit of drawn negatives against their sampling distribution.
#[derive(Debug, Clone, Serialize)]
pub struct AuditSummary {
    pub strategy: Strategy,
    pub batches: usize,
    /// `item` for drawn negative items, `user` for drawn negative users.
    pub side: Option<&'static str>,
    pub draws: u64,
    pub chi2: Option<f64>,
    pub dof: Option<usize>,
    pub critical_999: Option<f64>,
    pub passed: Option<bool>,
}

/// χ² statistic of `counts` against `dist` over outcomes with positive mass.
pub fn chi_square(counts: &[u64], dist: &DiscreteDistribution) -> (f64, usize) {
    let total: u64 = counts.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&c, &p) in counts.iter().zip(dist.probs()) {
        if p > 0.0 {
            let e = p * total as f64;
            stat += (c as f64 - e).powi(2) / e;
            cells += 1;
        }
    }
    (stat, cells.saturating_sub(1))
}

pub fn chi_square_critical(dof: usize, level: f64) -> f64 {
    ChiSquared::new(dof.max(1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(level)
}

/// Samples `batches` batches, optionally writing them as JSON lines.
pub fn sample_audit(
    graph: &InteractionGraph,
    cfg: &crate::sampler::SamplerConfig,
    family: crate::sampler::LossFamily,
    batches: usize,
    mut sink: Option<&mut dyn std::io::Write>,
) -> Result<AuditSummary> {
    let ctx = SamplingContext::new(graph, cfg.clone(), family)?;
    let marg = build_marginals(graph)?;
    let (side, dist): (Option<&'static str>, Option<&DiscreteDistribution>) = match cfg.strategy {
        Strategy::Negative => (Some("item"), Some(ctx.noise())),
        Strategy::Stratified => (Some("user"), Some(&marg.user)),
        _ => (None, None),
    };
    let mut counts = vec![0u64; dist.map_or(0, |d| d.len())];
    let mut sampler = ctx.seeded_sampler(0);
    for i in 0..batches {
        let batch = match sampler.next_batch() {
            Some(b) => b,
            None => sampler.next_batch().expect("graph has links"),
        };
        let negs = match &batch.negatives {
            Negatives::Explicit(n) => n.as_slice(),
            Negatives::DenseGrid(_) => &[],
        };
        for n in negs {
            match side {
                Some("item") => counts[batch.items[n.item_slot] as usize] += 1,
                Some("user") => counts[batch.users[n.user_slot] as usize] += 1,
                _ => {}
            }
        }
        if let Some(w) = sink.as_deref_mut() {
            let line = AuditLine {
                batch: i,
                strategy: batch.strategy,
                composition: batch.composition(),
                users: &batch.users,
                items: &batch.items,
                pos_links: (0..batch.pos_links.len()).map(|j| (batch.pos_user(j), batch.pos_item(j))).collect(),
                neg_links: negs.iter().map(|n| (batch.users[n.user_slot], batch.items[n.item_slot])).collect(),
            };
            let text = serde_json::to_string(&line).expect("audit line serializes");
            writeln!(w, "{text}").map_err(|e| Error::io("audit.jsonl", e))?;
        }
    }
    let draws: u64 = counts.iter().sum();
    let fit = dist.filter(|_| draws > 0).map(|d| {
        let (chi2, dof) = chi_square(&counts, d);
        let crit = chi_square_critical(dof, 0.999);
        (chi2, dof, crit)
    });
    Ok(AuditSummary {
        strategy: cfg.strategy,
        batches,
        side,
        draws,
        chi2: fit.map(|f| f.0),
        dof: fit.map(|f| f.1),
        critical_999: fit.map(|f| f.2),
        passed: fit.map(|(c, _, k)| c <= k),
    })
}

fn cmd_sample_audit(cfg: &RunConfig) -> Result<()> {
    let graph = load_graph(cfg)?;
    let sc = cfg.sampler()?;
    let family = cfg.loss()?.family();
    let dir = out_dir(cfg)?;
    let path = dir.join("audit.jsonl");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let summary = sample_audit(&graph, &sc, family, cfg.audit_batches()?, Some(&mut w))?;
    std::io::Write::flush(&mut w).map_err(|e| Error::io(&path, e))?;
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write(&dir.join("audit_summary.json"), &text)?;
    println!("{text}");
    if summary.passed == Some(false) {
        return Err(Error::Numerical("negative draws fail the chi-square test".into()));
    }
    Ok(())
}
