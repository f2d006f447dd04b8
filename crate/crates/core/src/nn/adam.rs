use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Bias-corrected Adam over a list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Real> Adam<T> {
    /// `sizes` are the lengths of the parameter tensors, in update order.
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update. Non-finite gradients are rejected before any state changes.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[Vec<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::LengthMismatch { left: params.len(), right: self.m.len() });
        }
        for (i, g) in grads.iter().enumerate() {
            if g.len() != self.m[i].len() || params[i].len() != g.len() {
                return Err(Error::ShapeMismatch {
                    context: "adam state",
                    expected: vec![self.m[i].len()],
                    actual: vec![g.len()],
                });
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Diverged { epoch: 0, reason: format!("non-finite gradient in parameter tensor {i}") });
            }
        }
        self.t += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one, lr, eps) = (T::one(), T::lit(c.learning_rate), T::lit(c.epsilon));
        let bc1 = one - T::lit(c.beta1.powi(self.t as i32));
        let bc2 = one - T::lit(c.beta2.powi(self.t as i32));
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for k in 0..g.len() {
                m[k] = b1 * m[k] + (one - b1) * g[k];
                v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::<f64>::new(AdamConfig { learning_rate: 0.1, ..Default::default() }, &[1]);
        let mut w = vec![1.0];
        adam.step(&mut [&mut w], &[vec![1.0]]).unwrap();
        // m_hat = v_hat = 1  =>  w = 1 - 0.1 / (1 + 1e-8)
        assert!((w[0] - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((w[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut adam = Adam::<f32>::new(AdamConfig::default(), &[3]);
        let mut w = vec![0.5, -2.0, 3.0];
        for _ in 0..100 {
            adam.step(&mut [&mut w], &[vec![0.0; 3]]).unwrap();
        }
        assert_eq!(w, vec![0.5, -2.0, 3.0]);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut adam = Adam::<f32>::new(AdamConfig::default(), &[2]);
            let mut w = vec![0.3f32, -0.7];
            let mut trace = Vec::new();
            for t in 0..50 {
                let g = vec![w[0] * 2.0 + t as f32 * 0.01, (w[1] - 1.0).sin()];
                adam.step(&mut [&mut w], &[g]).unwrap();
                trace.extend(w.iter().map(|v| v.to_bits()));
            }
            trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut adam = Adam::<f64>::new(AdamConfig::default(), &[1]);
        let mut w = vec![1.0];
        assert!(matches!(adam.step(&mut [&mut w], &[vec![f64::NAN]]), Err(Error::Diverged { .. })));
        assert_eq!(w[0], 1.0);
        assert_eq!(adam.step_count(), 0);
    }
}
