//! Plain SGD and bias-corrected Adam over dense parameter blocks.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::config("train.optimizer", format!("unknown optimizer {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr", "learning rate must be non-negative"));
        }
        for (key, b) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(key, "must lie in [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("train.eps", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: u64,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, params: &[Array2<f64>]) -> Self {
        let zeros = || params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        let adam = cfg.kind == OptimizerKind::Adam;
        Optimizer {
            cfg,
            m: if adam { zeros() } else { Vec::new() },
            v: if adam { zeros() } else { Vec::new() },
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Array2<f64>], &[Array2<f64>]) {
        (&self.m, &self.v)
    }

    pub fn step(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>]) {
        self.t += 1;
        let lr = self.cfg.lr;
        match self.cfg.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    p.scaled_add(-lr, g);
                }
            }
            OptimizerKind::Adam => {
                let OptimizerConfig { beta1, beta2, eps, .. } = self.cfg;
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let mh = *m / c1;
                        let vh = *v / c2;
                        *p -= lr * mh / (vh.sqrt() + eps);
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn adam(lr: f64) -> OptimizerConfig {
        OptimizerConfig {
            lr,
            ..OptimizerConfig::default()
        }
    }

    #[test]
    fn zero_gradient_keeps_parameters_and_decays_moments() {
        let start = vec![array![[1.0, -2.0]]];
        let mut p = start.clone();
        let mut opt = Optimizer::new(adam(0.1), &p);
        opt.step(&mut p, &[array![[0.0, 0.0]]]);
        assert_eq!(p, start);

        opt.step(&mut p, &[array![[1.0, 1.0]]]);
        let (m1, v1) = (opt.moments().0[0].clone(), opt.moments().1[0].clone());
        opt.step(&mut p, &[array![[0.0, 0.0]]]);
        assert_eq!(opt.moments().0[0], &m1 * 0.9);
        assert_eq!(opt.moments().1[0], &v1 * 0.999);
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let lr = 0.01;
        let mut p = vec![array![[0.0]]];
        let mut opt = Optimizer::new(adam(lr), &p);
        opt.step(&mut p, &[array![[1.0]]]);
        assert_abs_diff_eq!(p[0][[0, 0]], -lr, epsilon = 1e-6 * lr);
    }

    #[test]
    fn adam_matches_scalar_reference_over_100_steps() {
        let cfg = adam(0.05);
        let mut p = vec![array![[0.3, -0.7], [1.1, 0.0]]];
        let mut opt = Optimizer::new(cfg, &p);
        let mut r = p[0].clone().into_raw_vec_and_offset().0;
        let (mut m, mut v) = (vec![0.0; 4], vec![0.0; 4]);
        for t in 1..=100 {
            let g: Vec<f64> = r.iter().enumerate().map(|(i, x)| (x * 1.7 + i as f64 * 0.3 + t as f64 * 0.01).sin()).collect();
            for i in 0..4 {
                m[i] = 0.9 * m[i] + 0.1 * g[i];
                v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
                let mh = m[i] / (1.0 - 0.9f64.powi(t));
                let vh = v[i] / (1.0 - 0.999f64.powi(t));
                r[i] -= 0.05 * mh / (vh.sqrt() + 1e-8);
            }
            let ga = Array2::from_shape_vec((2, 2), g).unwrap();
            opt.step(&mut p, &[ga]);
        }
        for (a, b) in p[0].iter().zip(&r) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn sgd_step_is_plain_descent() {
        let mut p = vec![array![[1.0, 2.0]]];
        let mut opt = Optimizer::new(
            OptimizerConfig {
                kind: OptimizerKind::Sgd,
                lr: 0.5,
                ..OptimizerConfig::default()
            },
            &p,
        );
        opt.step(&mut p, &[array![[2.0, -4.0]]]);
        assert_eq!(p[0], array![[0.0, 4.0]]);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let cfg = OptimizerConfig {
                kind,
                lr: 0.0,
                ..OptimizerConfig::default()
            };
            let mut p = vec![array![[0.25, -1.5]]];
            let mut opt = Optimizer::new(cfg, &p);
            for _ in 0..5 {
                opt.step(&mut p, &[array![[3.0, 0.1]]]);
            }
            assert_eq!(p[0], array![[0.25, -1.5]]);
        }
    }
}
