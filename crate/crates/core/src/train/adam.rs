//! Adam with global gradient-norm clipping.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{ParamSet, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
            v: params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
        }
    }

    /// Scales gradients so their global norm is at most `max_norm`; returns
    /// the norm before scaling.
    pub fn clip(params: &mut ParamSet<T>, max_norm: f64) -> T {
        let norm = params.grad_norm();
        let limit = T::c(max_norm);
        if norm > limit {
            let k = limit / norm;
            for p in params.iter_mut() {
                p.grad.data_mut().iter_mut().for_each(|g| *g = *g * k);
            }
        }
        norm
    }

    /// One bias-corrected update from the accumulated gradients.
    pub fn update(&mut self, params: &mut ParamSet<T>, lr: f64) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::invalid(
                "optimizer state does not match the parameter set",
            ));
        }
        self.step += 1;
        let (b1, b2) = (T::c(self.beta1), T::c(self.beta2));
        let one = T::one();
        let t = self.step as i32;
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        let (lr, eps) = (T::c(lr), T::c(self.eps));
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            for (i, x) in p.value.data_mut().iter_mut().enumerate() {
                let mi = b1 * m.data()[i] + (one - b1) * g[i];
                let vi = b2 * v.data()[i] + (one - b2) * g[i] * g[i];
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                *x = *x - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
