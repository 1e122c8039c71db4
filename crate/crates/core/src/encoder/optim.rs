use serde::{Deserialize, Serialize};

use super::{EncoderGrads, EncoderParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moment accumulators for every encoder parameter, in
/// [`EncoderParams::to_flat`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, params: &EncoderParams) -> Self {
        let n = params.num_params();
        Self {
            config,
            step: 0,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
        }
    }

    /// One bias-corrected Adam update.
    pub fn apply(&mut self, params: &mut EncoderParams, grads: &EncoderGrads) -> Result<()> {
        let n = params.num_params();
        let g_len = grads.embeddings.len() + grads.weights.len() + grads.bias.len();
        if g_len != n || self.first_moment.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: g_len,
            });
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);

        let params_iter = params
            .embeddings
            .iter_mut()
            .chain(params.weights.iter_mut())
            .chain(params.bias.iter_mut());
        let grads_iter = grads.embeddings.iter().chain(&grads.weights).chain(&grads.bias);
        for (((theta, g), m), v) in params_iter
            .zip(grads_iter)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *theta -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}
