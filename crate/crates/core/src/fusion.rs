//! Multi-head cross-attention: frequency rows query temporal rows.

use crate::diff::{Tape, Tensor, Var};
use crate::error::{config, Result};
use crate::params::{Binding, Init, ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;

/// Per-head width is `dim / heads`; projections carry no bias.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub heads: usize,
    pub dim: usize,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

pub struct AttentionOutput {
    pub features: Var,
    /// One `queries x keys` row-stochastic node per head.
    pub weights: Vec<Var>,
}

impl CrossAttention {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(config(format!("{heads} heads do not divide model width {dim}")));
        }
        let mut proj = |name: &str| store.add(format!("fusion.{name}"), ParamGroup::Head, init.normal(dim, dim, 1.0));
        let (wq, wk, wv, wo) = (proj("wq"), proj("wk"), proj("wv"), proj("wo"));
        Ok(Self { heads, dim, wq, wk, wv, wo })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, x_freq: Var, x_temp: Var) -> Result<AttentionOutput> {
        let (qd, kd) = (tape.value(x_freq).cols(), tape.value(x_temp).cols());
        if qd != self.dim || kd != self.dim {
            return Err(config(format!(
                "cross-attention width mismatch: queries {qd}, keys/values {kd}, model {}",
                self.dim
            )));
        }
        let q = tape.matmul(x_freq, p[self.wq])?;
        let k = tape.matmul(x_temp, p[self.wk])?;
        let v = tape.matmul(x_temp, p[self.wv])?;
        let dh = self.head_dim();
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let a = tape.softmax_rows(scores, scale);
            weights.push(a);
            outs.push(tape.matmul(a, vh)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        let features = tape.matmul(cat, p[self.wo])?;
        Ok(AttentionOutput { features, weights })
    }

    /// Value-level evaluation with the stored parameters.
    pub fn apply<T: Scalar>(&self, store: &ParamStore<T>, x_freq: &Tensor<T>, x_temp: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let (q, k) = (tape.constant(x_freq.clone()), tape.constant(x_temp.clone()));
        let out = self.forward(&mut tape, &p, q, k)?;
        let w = out.weights.iter().map(|&w| tape.value(w).clone()).collect();
        Ok((tape.value(out.features).clone(), w))
    }
}
