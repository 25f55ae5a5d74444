//! Adam with a cosine-annealed learning rate.

use serde::{Deserialize, Serialize};

pub const DEFAULT_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPSILON: f64 = 1e-8;

/// `base · (1 + cos(π·step/total)) / 2`; decays to zero at `step = total`.
pub fn cosine_lr(step: usize, total: usize, base_lr: f64) -> f64 {
    let frac = step as f64 / total.max(1) as f64;
    base_lr * (1.0 + (std::f64::consts::PI * frac).cos()) / 2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(num_params: usize, betas: (f64, f64)) -> Self {
        Self { beta1: betas.0, beta2: betas.1, m: vec![0.0; num_params], v: vec![0.0; num_params], step: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Advances the moments and returns the deltas to add to the parameters.
    pub fn step(&mut self, grads: &[f64], lr: f64) -> Vec<f64> {
        assert_eq!(grads.len(), self.m.len(), "gradient length must match parameter count");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        grads
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[i] / c1;
                let v_hat = self.v[i] / c2;
                -lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON)
            })
            .collect()
    }
}
