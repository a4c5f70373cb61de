//! Adam optimizer with bias correction.

use crate::error::{CoreError, Result};
use crate::graph::Graph;
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

/// Adam state: per-parameter first/second moment buffers aligned with the
/// store's registration order, plus the shared step counter.
pub struct Adam<S> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every parameter in the store, pulling gradients from
    /// the graph of the step's backward pass. Gradients are left untouched;
    /// the next step uses a fresh graph.
    pub fn step(&mut self, store: &ParamStore<S>, graph: &Graph<S>) -> Result<()> {
        let params = store.params();
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![S::ZERO; p.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(CoreError::State("adam: parameter set changed between steps".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (S::from_f64(self.beta1), S::from_f64(self.beta2));
        let nb1 = S::from_f64(1.0 - self.beta1);
        let nb2 = S::from_f64(1.0 - self.beta2);
        let lr = S::from_f64(self.lr / bc1);
        let inv_sqrt_bc2 = S::from_f64(1.0 / bc2.sqrt());
        let eps = S::from_f64(self.eps);

        for (idx, param) in params.iter().enumerate() {
            let grad = graph.param_grad(param).ok_or_else(|| {
                CoreError::State(format!("adam: missing gradient for parameter {}", param.name()))
            })?;
            if !grad.all_finite() {
                return Err(CoreError::NonFinite { op: "adam_step" });
            }
            let value = param.value();
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let mut next = Vec::with_capacity(value.numel());
            for ((&g, (mi, vi)), &x) in grad
                .data()
                .iter()
                .zip(m.iter_mut().zip(v.iter_mut()))
                .zip(value.data())
            {
                *mi = b1 * *mi + nb1 * g;
                *vi = b2 * *vi + nb2 * g * g;
                let denom = vi.sqrt() * inv_sqrt_bc2 + eps;
                next.push(x - lr * *mi / denom);
            }
            param.set(Tensor::from_vec(value.shape(), next));
        }
        Ok(())
    }
}
