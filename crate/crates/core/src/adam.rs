//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::ops::Param;
use crate::tensor::{Scalar, Tensor};

/// Optimizer hyperparameters. The learning-rate default comes from the
/// training protocol; the moment coefficients are the optimizer's standard
/// formulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamHyper {
            learning_rate,
            ..Default::default()
        }
    }
}

/// First/second moment accumulators aligned with a fixed parameter list.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar> {
    pub hyper: AdamHyper,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(hyper: AdamHyper, params: &[&mut Param<T>]) -> Self {
        AdamState {
            hyper,
            m: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            step: 0,
        }
    }

    /// One bias-corrected update from the gradients currently accumulated
    /// in `params`. Gradients are left untouched; callers zero them.
    pub fn step(&mut self, params: &mut [&mut Param<T>]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam state tracks {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::of(self.hyper.beta1);
        let b2 = T::of(self.hyper.beta2);
        let one = T::one();
        let lr = T::of(self.hyper.learning_rate);
        let eps = T::of(self.hyper.epsilon);
        let corr1 = one - b1.powi(t);
        let corr2 = one - b2.powi(t);

        for (i, p) in params.iter_mut().enumerate() {
            if p.grad.shape() != p.value.shape() || p.grad.shape() != self.m[i].shape() {
                return Err(Error::ShapeMismatch(format!(
                    "adam shape mismatch on {}",
                    p.name
                )));
            }
            if !p.grad.all_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite gradient for parameter {}",
                    p.name
                )));
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let g = p.grad.data();
            let w = p.value.data_mut();
            for j in 0..g.len() {
                let gj = g[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let mhat = m[j] / corr1;
                let vhat = v[j] / corr2;
                w[j] = w[j] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
