//! Adam with bias correction, and the step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::nn::ParamStore;
use crate::tensor::{Float, Tensor};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first and second moments plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Float> Adam<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Adam {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    /// One update. Rejects non-finite gradients before touching any state,
    /// naming the offending parameter.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) -> Result<(), TrainError> {
        if grads.len() != params.len() {
            return Err(TrainError::Optimizer(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (id, g) in params.ids().zip(grads) {
            if g.shape() != params.get(id).shape() {
                return Err(TrainError::Optimizer(format!(
                    "gradient shape {:?} for parameter {} of shape {:?}",
                    g.shape(),
                    params.name(id),
                    params.get(id).shape()
                )));
            }
            if !g.all_finite() {
                return Err(TrainError::NonFinite(format!("gradient of parameter {}", params.name(id))));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2_sqrt = (1.0 - beta2.powi(self.step as i32)).sqrt();
        let step_size = T::from_f64(lr / bc1);
        let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
        let (one, eps, bc2_sqrt) = (T::one(), T::from_f64(eps), T::from_f64(bc2_sqrt));
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.get_mut(id).data_mut();
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                p[j] -= step_size * m[j] / (v[j].sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}

/// `base / (1/decay)^k`, where `k` counts the milestones `m` with
/// `step ≥ m · total`.
pub fn lr_schedule_with(step: u64, total: u64, base: f64, milestones: &[f64], decay: f64) -> f64 {
    let passed = milestones
        .iter()
        .filter(|&&m| step as f64 >= m * total as f64)
        .count();
    base / (1.0 / decay).powi(passed as i32)
}

/// Divides the rate by 10 at one half and three quarters of training.
pub fn lr_schedule(step: u64, total: u64, base: f64) -> f64 {
    lr_schedule_with(step, total, base, &[0.5, 0.75], 0.1)
}
