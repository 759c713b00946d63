//! AdamW and the training schedules.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Param, ParamKind};

/// Decoupled-weight-decay Adam. Moment buffers are matched to parameters by
/// visiting order, which is fixed for a given model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self { beta1, beta2, eps, weight_decay, step: 0, first: Vec::new(), second: Vec::new() }
    }

    /// Applies one update with learning rate `lr` to every trainable
    /// parameter passed to `visit`.
    pub fn update(&mut self, lr: f64, visit: impl FnOnce(&mut dyn FnMut(&str, &mut Param))) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let decay = (1.0 - lr * self.weight_decay) as f32;
        let step_size = (lr / bc1) as f32;
        let bc2_sqrt = libm::sqrt(bc2) as f32;
        let eps = self.eps as f32;
        let mut idx = 0;
        let (first, second) = (&mut self.first, &mut self.second);
        visit(&mut |_, p| {
            if p.kind != ParamKind::Trainable {
                return;
            }
            if first.len() == idx {
                first.push(vec![0.0; p.value.len()]);
                second.push(vec![0.0; p.value.len()]);
            }
            let (m, v) = (&mut first[idx], &mut second[idx]);
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                p.value[i] = p.value[i] * decay - step_size * m[i] / (libm::sqrtf(v[i]) / bc2_sqrt + eps);
            }
            idx += 1;
        });
    }
}

/// Cosine annealing from `base` at step 0 to 0 at step `total - 1`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return base;
    }
    let progress = step.min(total - 1) as f64 / (total - 1) as f64;
    0.5 * base * (1.0 + libm::cos(core::f64::consts::PI * progress))
}

/// Linear α schedule: `step / total_steps`.
pub fn anneal_alpha(step: usize, total_steps: usize) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::StepOutOfRange { step, total: total_steps });
    }
    Ok(step as f64 / total_steps as f64)
}
