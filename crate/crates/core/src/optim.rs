//! SGD with momentum and coupled weight decay, and the learning-rate schedule.

use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-epoch learning-rate decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// `lr0 * (1 - epoch / epochs) ^ power`
    Poly { power: f64 },
    Constant,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Poly { power: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub schedule: Schedule,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr0: 0.025,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 40,
            batch_size: 8,
            seed: 0,
            schedule: Schedule::default(),
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("optimizer: {m}")));
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return bad("lr0 must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be finite and >= 0");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if let Schedule::Poly { power } = self.schedule {
            if !(power.is_finite() && power > 0.0) {
                return bad("poly power must be positive");
            }
        }
        Ok(())
    }
}

/// Learning rate for `epoch` (0-based).
pub fn lr_at(epoch: usize, cfg: &OptimConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::InvalidValue(format!(
            "epoch {epoch} is outside [0, {})",
            cfg.epochs
        )));
    }
    Ok(match cfg.schedule {
        Schedule::Poly { power } => cfg.lr0 * libm::pow(1.0 - epoch as f64 / cfg.epochs as f64, power),
        Schedule::Constant => cfg.lr0,
    })
}

/// One SGD update of every parameter:
/// `g' = g + wd * w; v = momentum * v + g'; w = w - lr * v`.
///
/// Arithmetic is carried out in f64 and rounded to each tensor's dtype.
pub fn sgd_step(
    params: &mut [Tensor],
    velocity: &mut [Tensor],
    grads: &[&[f64]],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != velocity.len() || params.len() != grads.len() {
        return Err(Error::InvalidValue(format!(
            "{} parameters, {} velocity buffers, {} gradients",
            params.len(),
            velocity.len(),
            grads.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.len() != params[i].len() || velocity[i].len() != params[i].len() {
            return Err(Error::shape("sgd_step", format!("parameter {i} length mismatch")));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("gradient of parameter {i}"),
            });
        }
    }
    for ((w, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        let wd = w.data().to_vec();
        v.map_inplace(|j, vj| momentum * vj + (g[j] + weight_decay * wd[j]));
        let vd = v.data();
        w.map_inplace(|j, wj| wj - lr * vd[j]);
    }
    Ok(())
}
