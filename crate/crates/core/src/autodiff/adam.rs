//! Adam with bias correction.

use super::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
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

/// Per-parameter first/second moment estimates and the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    cfg: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, param_shapes: &[&[usize]]) -> Self {
        Self {
            cfg,
            m: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update: `p -= lr * m_hat / (sqrt(v_hat) + eps)` per element.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                detail: format!(
                    "{} params, {} grads, state for {}",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            });
        }
        for ((p, g), i) in params.iter().zip(grads).zip(0..) {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    detail: format!(
                        "param {i}: {:?} vs grad {:?}",
                        p.shape(),
                        g.shape()
                    ),
                });
            }
        }
        self.t += 1;
        let b1t = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let g = grads[i].data();
            let p = params[i].data_mut();
            for j in 0..p.len() {
                m[j] = self.cfg.beta1 * m[j] + (1.0 - self.cfg.beta1) * g[j];
                v[j] = self.cfg.beta2 * v[j] + (1.0 - self.cfg.beta2) * g[j] * g[j];
                let m_hat = m[j] / b1t;
                let v_hat = v[j] / b2t;
                p[j] -= self.cfg.learning_rate * m_hat / (v_hat.sqrt() + self.cfg.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        let cfg = AdamConfig::with_lr(0.001);
        let shapes: &[&[usize]] = &[&[2]];
        let mut state = AdamState::new(cfg, shapes);
        let mut params = vec![Tensor::zeros(&[2])];
        let grads = vec![Tensor::filled(&[2], 1.0)];
        state.step(&mut params, &grads).unwrap();
        // bias-corrected m_hat / sqrt(v_hat) = 1 on the first step
        for &p in params[0].data() {
            assert!((p + 0.001).abs() < 1e-9, "got {p}");
        }
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut state = AdamState::new(AdamConfig::default(), &[&[3]]);
        let mut params = vec![Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = params[0].clone();
        let grads = vec![Tensor::zeros(&[3])];
        state.step(&mut params, &grads).unwrap();
        assert_eq!(params[0], before);
    }

    #[test]
    fn constant_gradient_steps_bounded_by_lr() {
        let cfg = AdamConfig::with_lr(0.01);
        let mut state = AdamState::new(cfg, &[&[1]]);
        let mut params = vec![Tensor::zeros(&[1])];
        let grads = vec![Tensor::filled(&[1], 3.7)];
        let mut prev = 0.0;
        for _ in 0..2 {
            state.step(&mut params, &grads).unwrap();
            let delta = (params[0].data()[0] - prev).abs();
            assert!(delta <= 0.01 * (1.0 + 1e-6), "step {delta}");
            prev = params[0].data()[0];
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut state = AdamState::new(AdamConfig::default(), &[&[2]]);
        let mut params = vec![Tensor::zeros(&[2])];
        let grads = vec![Tensor::zeros(&[3])];
        assert!(state.step(&mut params, &grads).is_err());
    }
}
