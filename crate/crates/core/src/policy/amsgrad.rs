use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dim, Result};
use crate::linalg::all_finite;

/// Adam with the running maximum of the second moment.
///
/// `θ ← θ − lr · m̂ / (√(v̂ / (1 − β₂ᵗ)) + ε)` with `m̂ = m / (1 − β₁ᵗ)` and
/// `v̂ = max(v̂, v)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AmsGrad {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub v_max: Vec<f64>,
    pub step: u64,
    /// Steps refused because the gradient held NaN or infinity.
    pub skipped: u64,
}

impl AmsGrad {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            v_max: vec![0.0; n],
            step: 0,
            skipped: 0,
        }
    }

    /// Returns `false` if the step was skipped.
    pub fn update(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<bool> {
        check_dim("parameters", self.m.len(), theta.len())?;
        check_dim("gradient", self.m.len(), grad.len())?;
        if !all_finite(grad) {
            self.skipped += 1;
            log::warn!("skipping optimizer step with non-finite gradient");
            return Ok(false);
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - libm::pow(self.beta1, t);
        let bc2 = 1.0 - libm::pow(self.beta2, t);
        let step_size = self.lr / bc1;
        let bc2_sqrt = libm::sqrt(bc2);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            self.v_max[i] = self.v_max[i].max(self.v[i]);
            let denom = libm::sqrt(self.v_max[i]) / bc2_sqrt + self.epsilon;
            theta[i] -= step_size * self.m[i] / denom;
        }
        Ok(true)
    }
}
