//! Flat `key = value` run configuration.
//!
//! Every key has a default. A config file and `--key=value` overrides may
//! set any known key; unknown keys are rejected with the key named.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::distributions::NoiseSpec;
use crate::error::{Error, Result};
use crate::graph::{SplitSpec, SynthSpec};
use crate::ledger::UnitCosts;
use crate::losses::{LossKind, LossSpec};
use crate::model::{ItemFnKind, ModelConfig};
use crate::optim::{OptimizerConfig, OptimizerKind};
use crate::sampler::{SamplerConfig, Strategy};
use crate::trainer::TrainConfig;

/// Environment variable that replaces `output.dir`.
pub const OUTPUT_ENV: &str = "CFSAMPLE_OUT";

const KEYS: &[(&str, &str)] = &[
    ("data.source", "synth"),
    ("data.links", ""),
    ("data.features", ""),
    ("data.num-users", ""),
    ("data.num-items", ""),
    ("synth.users", "200"),
    ("synth.items", "300"),
    ("synth.links", "6000"),
    ("synth.exponent", "1.0"),
    ("synth.seed", "7"),
    ("synth.rank", "8"),
    ("synth.signal", "6.0"),
    ("synth.vocab", "200"),
    ("synth.bag-len", "30"),
    ("split.fraction", "0.2"),
    ("split.seed", "0"),
    ("sampler.strategy", "negative"),
    ("sampler.b", "512"),
    ("sampler.k", "10"),
    ("sampler.s", "4"),
    ("sampler.seed", "0"),
    ("sampler.exclude-known-positives", "false"),
    ("sampler.noise", "degree-unigram"),
    ("loss.kind", "sg"),
    ("loss.lambda", ""),
    ("loss.gamma", ""),
    ("loss.pos-target", "1"),
    ("loss.neg-target", "0"),
    ("model.dim", "16"),
    ("model.item-fn", "id"),
    ("model.hidden", "64"),
    ("model.token-dim", "32"),
    ("model.seed", "0"),
    ("model.init-scale", "0.05"),
    ("train.optimizer", "adam"),
    ("train.lr", "0.001"),
    ("train.beta1", "0.9"),
    ("train.beta2", "0.999"),
    ("train.eps", "1e-8"),
    ("train.epochs", "10"),
    ("train.eval-every", "1"),
    ("train.weight-decay", "0"),
    ("train.g-cost-multiplier", "1"),
    ("train.early-stop-patience", ""),
    ("eval.m", "50"),
    ("eval.checkpoint", ""),
    ("speedup.strategies", "iid,negative,stratified,neg-sharing,stratified-ns"),
    ("speedup.reference-epochs", "30"),
    ("speedup.max-epochs", "30"),
    ("audit.batches", "100"),
    ("cost.t-f", "1"),
    ("cost.t-g", "1"),
    ("cost.t-i", "1"),
    ("gradcheck.fault", "none"),
    ("output.dir", "cfsample-out"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|&(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    pub fn known_keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|&(k, _)| k)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(Error::config(key, "unknown configuration key")),
        }
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, path)
    }

    /// Applies `--key=value` (or `key=value`) arguments.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, args: &[S]) -> Result<()> {
        for a in args {
            let a = a.as_ref();
            let body = a.strip_prefix("--").unwrap_or(a);
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| Error::config(body, "override must look like --key=value"))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("undeclared key {key}"))
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        let raw = self.get(key);
        raw.parse()
            .map_err(|e| Error::config(key, format!("cannot parse {raw:?}: {e}")))
    }

    fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        if self.get(key).is_empty() {
            Ok(None)
        } else {
            self.parse(key).map(Some)
        }
    }

    fn path_opt(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn links_path(&self) -> Option<PathBuf> {
        self.path_opt("data.links")
    }

    pub fn features_path(&self) -> Option<PathBuf> {
        self.path_opt("data.features")
    }

    pub fn checkpoint_path(&self) -> Option<PathBuf> {
        self.path_opt("eval.checkpoint")
    }

    pub fn data_source(&self) -> Result<DataSource> {
        match self.get("data.source") {
            "file" => Ok(DataSource::File),
            "synth" => Ok(DataSource::Synth),
            other => Err(Error::config("data.source", format!("expected file or synth, got {other:?}"))),
        }
    }

    pub fn num_users(&self) -> Result<Option<usize>> {
        self.parse_opt("data.num-users")
    }

    pub fn num_items(&self) -> Result<Option<usize>> {
        self.parse_opt("data.num-items")
    }

    pub fn synth(&self) -> Result<SynthSpec> {
        let mut s = SynthSpec::new(
            self.parse("synth.users")?,
            self.parse("synth.items")?,
            self.parse("synth.links")?,
            self.parse("synth.exponent")?,
            self.parse("synth.seed")?,
        );
        s.rank = self.parse("synth.rank")?;
        s.signal = self.parse("synth.signal")?;
        s.vocab = self.parse("synth.vocab")?;
        s.bag_len = self.parse("synth.bag-len")?;
        Ok(s)
    }

    pub fn split(&self) -> Result<SplitSpec> {
        Ok(SplitSpec {
            test_item_fraction: self.parse("split.fraction")?,
            seed: self.parse("split.seed")?,
        })
    }

    pub fn sampler(&self) -> Result<SamplerConfig> {
        Ok(SamplerConfig {
            strategy: self.parse::<Strategy>("sampler.strategy")?,
            b: self.parse("sampler.b")?,
            k: self.parse("sampler.k")?,
            s: self.parse("sampler.s")?,
            seed: self.parse("sampler.seed")?,
            exclude_known_positives: self.parse("sampler.exclude-known-positives")?,
            noise: self.parse::<NoiseSpec>("sampler.noise")?,
        })
    }

    pub fn loss(&self) -> Result<LossSpec> {
        let mut spec = LossSpec::new(self.parse::<LossKind>("loss.kind")?);
        if let Some(l) = self.parse_opt("loss.lambda")? {
            spec.lambda = l;
        }
        if let Some(g) = self.parse_opt("loss.gamma")? {
            spec.gamma = g;
        }
        spec.pos_target = self.parse("loss.pos-target")?;
        spec.neg_target = self.parse("loss.neg-target")?;
        Ok(spec)
    }

    pub fn model(&self) -> Result<ModelConfig> {
        Ok(ModelConfig {
            dim: self.parse("model.dim")?,
            item_fn: self.parse::<ItemFnKind>("model.item-fn")?,
            hidden: self.parse("model.hidden")?,
            token_dim: self.parse("model.token-dim")?,
            seed: self.parse("model.seed")?,
            init_scale: self.parse("model.init-scale")?,
        })
    }

    pub fn optimizer(&self) -> Result<OptimizerConfig> {
        Ok(OptimizerConfig {
            kind: self.parse::<OptimizerKind>("train.optimizer")?,
            lr: self.parse("train.lr")?,
            beta1: self.parse("train.beta1")?,
            beta2: self.parse("train.beta2")?,
            eps: self.parse("train.eps")?,
        })
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            sampler: self.sampler()?,
            loss: self.loss()?,
            optim: self.optimizer()?,
            model: self.model()?,
            epochs: self.parse("train.epochs")?,
            eval_every: self.parse("train.eval-every")?,
            eval_m: self.parse("eval.m")?,
            weight_decay: self.parse("train.weight-decay")?,
            g_cost_multiplier: self.parse("train.g-cost-multiplier")?,
            early_stop_patience: self.parse_opt("train.early-stop-patience")?,
            target_loss: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn eval_m(&self) -> Result<usize> {
        self.parse("eval.m")
    }

    pub fn speedup_strategies(&self) -> Result<Vec<Strategy>> {
        self.get("speedup.strategies")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<Strategy>().map_err(|_| Error::config("speedup.strategies", format!("unknown strategy {s:?}"))))
            .collect()
    }

    pub fn speedup_epochs(&self) -> Result<(usize, usize)> {
        Ok((self.parse("speedup.reference-epochs")?, self.parse("speedup.max-epochs")?))
    }

    pub fn audit_batches(&self) -> Result<usize> {
        self.parse("audit.batches")
    }

    pub fn unit_costs(&self) -> Result<UnitCosts> {
        Ok(UnitCosts {
            t_f: self.parse("cost.t-f")?,
            t_g: self.parse("cost.t-g")?,
            t_i: self.parse("cost.t-i")?,
        })
    }

    pub fn gradcheck_fault(&self) -> Result<Option<crate::gradcheck::Fault>> {
        match self.get("gradcheck.fault") {
            "none" => Ok(None),
            "sign-flip" => Ok(Some(crate::gradcheck::Fault::SignFlip)),
            other => Err(Error::config("gradcheck.fault", format!("expected none or sign-flip, got {other:?}"))),
        }
    }

    /// `output.dir`, unless the environment overrides it.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => PathBuf::from(self.get("output.dir")),
        }
    }

    /// Every key with its resolved value, one `key = value` per line.
    pub fn resolved(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    File,
    Synth,
}
