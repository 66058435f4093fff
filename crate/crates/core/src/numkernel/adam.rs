use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        AdamState {
            config,
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(Error::Contract(format!(
                "adam step with {} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, (p, g)) in params.tensors().iter().zip(grads).enumerate() {
            if !p.same_shape(g) || !p.same_shape(&self.first[i]) {
                return Err(Error::Contract(format!(
                    "gradient {i} is shaped unlike its parameter"
                )));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (k, (theta, g)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                *theta -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
