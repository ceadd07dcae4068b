use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// Energy estimator and Stein critic.
    pub const EXPLICIT: AdamConfig = AdamConfig {
        lr: 2e-4,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };

    /// Generator and Wasserstein/JS critic.
    pub const IMPLICIT: AdamConfig = AdamConfig {
        lr: 2e-4,
        beta1: 0.5,
        beta2: 0.999,
        eps: 1e-8,
    };

    pub fn with_lr(self, lr: f64) -> Self {
        AdamConfig { lr, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid Adam settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, n: usize) -> Self {
        AdamState {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One bias-corrected descent step on `params` along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                context: "AdamState::step",
                expected: self.m.len(),
                found: if params.len() != self.m.len() {
                    params.len()
                } else {
                    grad.len()
                },
            });
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }

    /// Ascent step: descends on the negated gradient.
    pub fn step_ascent(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        self.step(params, &neg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = AdamState::new(AdamConfig::EXPLICIT, 3);
        let mut p = vec![1.0, -2.0, 3.0];
        s.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert!(s.m.iter().chain(&s.v).all(|&x| x == 0.0));
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_has_magnitude_lr() {
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut s = AdamState::new(cfg, 1);
        let mut p = vec![0.0];
        s.step(&mut p, &[1.0]).unwrap();
        // m̂ = 1, v̂ = 1
        assert!((p[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let cfg = AdamConfig::IMPLICIT.with_lr(0.01);
        let mut s = AdamState::new(cfg, 1);
        let mut p = vec![0.0];
        let mut prev = 0.0;
        for _ in 0..2000 {
            s.step(&mut p, &[-3.0]).unwrap();
            let delta = p[0] - prev;
            prev = p[0];
            assert!((delta - 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_lr_is_identity_and_length_checked() {
        let mut s = AdamState::new(AdamConfig::EXPLICIT.with_lr(0.0), 2);
        let mut p = vec![0.3, 0.4];
        s.step(&mut p, &[5.0, -1.0]).unwrap();
        assert_eq!(p, vec![0.3, 0.4]);
        assert!(s.step(&mut p, &[1.0]).is_err());
        assert!(s.step(&mut [0.0; 3], &[1.0, 1.0]).is_err());
    }
}
