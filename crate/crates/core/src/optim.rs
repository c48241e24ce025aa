//! SGD with momentum, weight decay, and polynomial learning-rate decay.

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Hyperparameters for [`sgd_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub max_iter: usize,
    pub poly_power: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr0: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            max_iter: 2000,
            poly_power: 0.9,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(Error::InvalidArg {
                op: "OptimizerConfig",
                msg: format!("lr0 must be positive, got {}", self.lr0),
            });
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArg {
                op: "OptimizerConfig",
                msg: format!("momentum must be in [0,1), got {}", self.momentum),
            });
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidArg {
                op: "OptimizerConfig",
                msg: format!("weight_decay must be nonnegative, got {}", self.weight_decay),
            });
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArg {
                op: "OptimizerConfig",
                msg: "max_iter must be positive".into(),
            });
        }
        if !(self.poly_power > 0.0) {
            return Err(Error::InvalidArg {
                op: "OptimizerConfig",
                msg: format!("poly_power must be positive, got {}", self.poly_power),
            });
        }
        Ok(())
    }

    /// Polynomially decayed rate `lr0 * (1 - iter/max_iter)^poly_power`.
    /// Past the schedule end the rate clamps to zero with a warning.
    pub fn lr(&self, iter: usize) -> f64 {
        if iter >= self.max_iter {
            if iter > self.max_iter {
                log::warn!(
                    "sgd_step called at iter {} past max_iter {}; lr clamped to 0",
                    iter,
                    self.max_iter
                );
            }
            return 0.0;
        }
        let frac = 1.0 - iter as f64 / self.max_iter as f64;
        self.lr0 * frac.powf(self.poly_power)
    }
}

/// One SGD update over every parameter in the graph:
/// `v <- momentum*v + grad + weight_decay*w; w <- w - lr(iter)*v`.
pub fn sgd_step(g: &mut Graph, cfg: &OptimizerConfig, iter: usize) {
    let lr = cfg.lr(iter);
    let ids: Vec<_> = g.param_ids().to_vec();
    for id in ids {
        let (value, grad, momentum) = g.param_state_mut(id);
        for i in 0..value.len() {
            let v = cfg.momentum * momentum[i] + grad[i] + cfg.weight_decay * value[i];
            momentum[i] = v;
            value[i] -= lr * v;
        }
    }
}
