//! Local optimizers for multi-step client training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Sgd { lr: 0.1 }
    }
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }

    pub fn validate(&self, key: &str) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        match *self {
            OptimizerConfig::Sgd { lr } if !positive(lr) => Err(Error::config(format!("{key}.lr"), "must be > 0")),
            OptimizerConfig::Adam { lr, .. } if !positive(lr) => {
                Err(Error::config(format!("{key}.lr"), "must be > 0"))
            }
            OptimizerConfig::Adam { beta1, .. } if !(0.0..1.0).contains(&beta1) => {
                Err(Error::config(format!("{key}.beta1"), "must lie in [0, 1)"))
            }
            OptimizerConfig::Adam { beta2, .. } if !(0.0..1.0).contains(&beta2) => {
                Err(Error::config(format!("{key}.beta2"), "must lie in [0, 1)"))
            }
            OptimizerConfig::Adam { eps, .. } if !positive(eps) => {
                Err(Error::config(format!("{key}.eps"), "must be > 0"))
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self, dims: usize) -> Optimizer {
        match *self {
            OptimizerConfig::Sgd { lr } => Optimizer::Sgd { lr },
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => Optimizer::Adam(Adam {
                lr,
                beta1,
                beta2,
                eps,
                m: vec![0.0; dims],
                v: vec![0.0; dims],
                t: 0,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u32,
}

/// Optimizer with its persistent state (moments survive across rounds).
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam(Adam),
}

impl Optimizer {
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= *lr * g;
                }
            }
            Optimizer::Adam(a) => {
                a.t += 1;
                let c1 = 1.0 - a.beta1.powi(a.t as i32);
                let c2 = 1.0 - a.beta2.powi(a.t as i32);
                for i in 0..params.len() {
                    let g = grad[i];
                    a.m[i] = a.beta1 * a.m[i] + (1.0 - a.beta1) * g;
                    a.v[i] = a.beta2 * a.v[i] + (1.0 - a.beta2) * g * g;
                    let m_hat = a.m[i] / c1;
                    let v_hat = a.v[i] / c2;
                    params[i] -= a.lr * m_hat / (v_hat.sqrt() + a.eps);
                }
            }
        }
    }
}
