use serde::{Deserialize, Serialize};
use vfs_tensor::Tensor;

use crate::error::{Error, Result};
use crate::model::params::NamedTensors;

/// Cosine decay from `base_lr` at step 0 to zero at `total_steps`.
pub fn lr_schedule(step: u64, total_steps: u64, base_lr: f64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            base_lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

/// `v <- mu v + g + wd theta; theta <- theta - lr v` for every tensor.
pub fn sgd_step(
    params: &mut NamedTensors<f32>,
    velocity: &mut NamedTensors<f32>,
    grads: &[Tensor<f32>],
    cfg: &SgdConfig,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || !params.congruent(velocity) {
        return Err(Error::Contract(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    let (mu, wd, lr) = (cfg.momentum as f32, cfg.weight_decay as f32, lr as f32);
    for ((p, v), g) in params.tensors_mut().iter_mut().zip(velocity.tensors_mut()).zip(grads) {
        if g.shape() != p.shape() {
            return Err(Error::Contract(format!("gradient {:?} for {:?}", g.shape(), p.shape())));
        }
        for ((w, m), &d) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *m = mu * *m + d + wd * *w;
            *w -= lr * *m;
        }
    }
    Ok(())
}
