//! Adam with bias correction and a cosine learning-rate schedule.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        AdamState {
            step: 0,
            m: zeros(),
            v: zeros(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one update from the accumulated gradients and clears them.
    /// Missing gradients count as zero.
    pub fn step(&mut self, params: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::shape("adam_step", "parameter count", self.m.len(), params.len()));
        }
        for p in params.iter() {
            if let Some(g) = &p.grad {
                if g.data().iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("adam_step", format!("non-finite gradient for {}", p.name)));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(t));
        let c2 = T::lit(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::lit(lr), T::lit(self.eps));
        for i in 0..params.len() {
            let id = ParamId(i);
            let Some(g) = params.grad(id).cloned() else {
                // zero gradient still decays the moments
                self.m[i].data_mut().iter_mut().for_each(|m| *m *= b1);
                self.v[i].data_mut().iter_mut().for_each(|v| *v *= b2);
                let (m, v) = (&self.m[i], &self.v[i]);
                let x = params.value_mut(id);
                for ((x, &m), &v) in x.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                    *x -= lr * (m / c1) / ((v / c2).sqrt() + eps);
                }
                continue;
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let x = params.value_mut(id);
            for (((x, m), v), &g) in x.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *x -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
        params.zero_grad();
        Ok(())
    }
}

/// `base_lr * (1 + cos(pi * step / total_steps)) / 2`.
pub fn cosine_annealing_lr(step: usize, total_steps: usize, base_lr: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::invalid("cosine_annealing_lr", "total_steps must be positive"));
    }
    if step > total_steps {
        return Err(Error::invalid("cosine_annealing_lr", format!("step {step} exceeds total {total_steps}")));
    }
    let phase = std::f64::consts::PI * step as f64 / total_steps as f64;
    Ok(base_lr * (1.0 + phase.cos()) / 2.0)
}
