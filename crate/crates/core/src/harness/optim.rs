//! AdamW with decoupled weight decay and one learning rate per parameter group.

use serde::{Deserialize, Serialize};

use crate::diff::{Gradients, Var};
use crate::error::{input, Error, Result};
use crate::params::{Binding, ParamGroup, ParamStore};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub encoder_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip: f64,
}

impl AdamWConfig {
    pub fn group_lr(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Encoder => self.encoder_lr,
            ParamGroup::Head => self.lr,
        }
    }
}

/// First and second moments, computed in `f64` regardless of the model scalar.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamW {
    pub fn new<T: Scalar>(config: AdamWConfig, store: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        Self { config, m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update from the gradients of the leaves in `binding`.
    /// Non-finite gradients leave the store untouched.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>, binding: &Binding, grads: &Gradients<T>) -> Result<f64> {
        if binding.vars().len() != store.len() || self.m.len() != store.len() {
            return Err(input("binding does not match the parameter store"));
        }
        let g: Vec<Vec<f64>> = binding.vars().iter().map(|&v: &Var| grads.get(v).to_f64_vec()).collect();
        let norm = g.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient norm {norm}")));
        }
        let scale = if self.config.clip > 0.0 && norm > self.config.clip { self.config.clip / norm } else { 1.0 };
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (((_, p), gi), (m, v)) in store.iter_mut().zip(&g).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let lr = c.group_lr(p.group);
            let data = p.value.data_mut();
            for k in 0..data.len() {
                let gk = gi[k] * scale;
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
                let w = data[k].to_f64().unwrap_or(f64::NAN);
                let upd = lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + c.eps) + lr * c.weight_decay * w;
                data[k] = T::lit(w - upd);
            }
        }
        Ok(norm)
    }
}

/// Element-wise `a0 + sum_i (a_i - a0) / n`; identical inputs give back `a0`
/// bit for bit.
pub fn mean_anchored(parts: &[&[f64]]) -> Vec<f64> {
    let n = parts.len() as f64;
    let a0 = parts[0];
    (0..a0.len())
        .map(|k| {
            let delta: f64 = parts.iter().map(|p| p[k] - a0[k]).sum();
            a0[k] + delta / n
        })
        .collect()
}
