//! Adam with bias correction, operating on flattened parameter vectors.

use serde::{Deserialize, Serialize};

use crate::tensor::Vector;
use crate::{Error, Result};

/// Optimizer hyperparameters as they appear in run configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad optimizer settings: {self:?}")))
        }
    }
}

/// Per-parameter first/second moment accumulators plus the step count.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(param_count: usize, config: OptimizerConfig) -> Self {
        AdamState {
            config,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. Rejects non-finite gradients with a diagnostic naming
    /// the offending coordinate; the moments are untouched on error.
    pub fn step(&mut self, params: &mut Vector, grads: &Vector) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape("adam step", self.m.len(), grads.len()));
        }
        if let Some((i, g)) = grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient coordinate {i} is {g} at optimizer step {}",
                self.step + 1
            )));
        }
        self.step += 1;
        let OptimizerConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..self.m.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}
