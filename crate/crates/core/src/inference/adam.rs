//! Adam, used as gradient ascent.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        Self { config, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// One bias-corrected ascent step `params += α m̂ / (√v̂ + ε)`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "parameter length changed");
        assert_eq!(grad.len(), self.m.len(), "gradient length mismatch");
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p += learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
}

pub fn adam_step(opt: &mut OptimizerState, params: &mut [f64], grad: &[f64]) {
    opt.step(params, grad);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut opt = OptimizerState::new(3, AdamConfig::default());
        let mut p = vec![1.0, -2.0, 0.5];
        for _ in 0..10 {
            opt.step(&mut p, &[0.0; 3]);
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn constant_gradient_step_tends_to_learning_rate() {
        let mut opt = OptimizerState::new(2, AdamConfig::default());
        let mut p = vec![0.0, 0.0];
        let mut last = p.clone();
        for _ in 0..5000 {
            last.copy_from_slice(&p);
            opt.step(&mut p, &[3.0, -0.2]);
        }
        assert!((p[0] - last[0] - 0.01).abs() < 1e-6);
        assert!((p[1] - last[1] + 0.01).abs() < 1e-6);
        // The very first bias-corrected step is already α·sign(g).
        let mut opt = OptimizerState::new(1, AdamConfig::default());
        let mut q = vec![0.0];
        opt.step(&mut q, &[7.0]);
        assert!((q[0] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut opt = OptimizerState::new(2, AdamConfig::default());
            let mut p = vec![0.3, 0.1];
            for k in 0..100 {
                let g = [(k as f64).sin(), (k as f64 * 0.3).cos()];
                opt.step(&mut p, &g);
            }
            p
        };
        assert_eq!(run(), run());
    }
}
