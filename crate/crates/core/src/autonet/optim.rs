use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam<S: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<S>>,
    second: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update to every parameter from its accumulated gradient.
    /// Parameters must be passed in the same order on every call.
    pub fn step(&mut self, params: &mut [&mut Tensor<S>]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![S::zero(); p.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(Error::invalid(format!(
                "adam: state tracks {} parameters, got {}",
                self.first.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = S::lit(self.beta1);
        let b2 = S::lit(self.beta2);
        let one = S::one();
        let c1 = S::lit(1.0 - self.beta1.powi(t));
        let c2 = S::lit(1.0 - self.beta2.powi(t));
        let lr = S::lit(self.lr);
        let eps = S::lit(self.eps);

        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            if m.len() != p.len() {
                return Err(Error::invalid("adam: parameter shape changed between steps"));
            }
            let (values, grad) = p.values_and_grad_mut();
            for i in 0..values.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `lr(epoch) = base_lr * gamma^floor(epoch / step_size)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLr {
    pub base_lr: f64,
    pub step_size: usize,
    pub gamma: f64,
}

impl StepLr {
    pub fn new(base_lr: f64, step_size: usize, gamma: f64) -> Self {
        Self {
            base_lr,
            step_size,
            gamma,
        }
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        let k = epoch / self.step_size.max(1);
        self.base_lr * self.gamma.powi(k as i32)
    }
}
