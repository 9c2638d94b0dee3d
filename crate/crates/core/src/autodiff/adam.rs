use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

/// Bias-corrected ADAM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub timestep: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(step_size: f64) -> Self {
        Self { step_size, beta1: 0.9, beta2: 0.999, eps: 1e-8, timestep: 0, m: Vec::new(), v: Vec::new() }
    }

    /// Update `params` in place with `grads` (same order and shapes every call).
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(&p.shape)).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer state built for a different parameter set");
        self.timestep += 1;
        let t = self.timestep as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            assert_eq!(p.shape, g.shape, "gradient shape mismatch");
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                p.data[i] -= self.step_size * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(5e-4)
    }
}
