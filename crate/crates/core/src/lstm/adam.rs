use serde::{Deserialize, Serialize};

use super::Parameterized;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 6e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected ADAM update of a single tensor at step `t >= 1`.
pub fn adam_update(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], t: u64, hp: &AdamHyper) {
    let bc1 = 1.0 - hp.beta1.powi(t as i32);
    let bc2 = 1.0 - hp.beta2.powi(t as i32);
    for k in 0..param.len() {
        let g = grad[k];
        m[k] = hp.beta1 * m[k] + (1.0 - hp.beta1) * g;
        v[k] = hp.beta2 * v[k] + (1.0 - hp.beta2) * g * g;
        let m_hat = m[k] / bc1;
        let v_hat = v[k] / bc2;
        param[k] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
}

/// ADAM state over the flattened tensors of a [`Parameterized`] model.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub hyper: AdamHyper,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, hyper: AdamHyper) -> Self {
        Adam { hyper, t: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    /// Applies one step. A non-finite gradient aborts before any parameter
    /// changes.
    pub fn step<M: Parameterized>(&mut self, params: &mut M, grads: &M) -> Result<()> {
        let grad_tensors = grads.tensors();
        for (name, g) in &grad_tensors {
            if let Some(k) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Divergence(format!("non-finite gradient in {name}[{k}]: {}", g[k])));
            }
        }
        self.t += 1;
        let mut offset = 0;
        for ((_, p), (_, g)) in params.tensors_mut().into_iter().zip(grad_tensors) {
            let n = p.len();
            adam_update(p, g, &mut self.m[offset..offset + n], &mut self.v[offset..offset + n], self.t, &self.hyper);
            offset += n;
        }
        if offset != self.m.len() {
            return Err(Error::Dimension(format!("optimizer sized for {} params, model has {offset}", self.m.len())));
        }
        Ok(())
    }
}
