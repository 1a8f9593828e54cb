//! Stacked bidirectional LSTM, mean pooling over time, two-way linear head.
//! Logit order is `[bonafide, spoof]`.

use crate::diff::{affine, Tape, Tensor, Var};
use crate::error::{config, Result};
use crate::params::{Binding, Init, ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;

/// Gate layout along the `4H` axis: input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub hidden: usize,
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
}

impl LstmCell {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, name: &str, input: usize, hidden: usize) -> Self {
        let wx = store.add(format!("{name}.wx"), ParamGroup::Head, init.normal(input, 4 * hidden, 1.0));
        let wh = store.add(format!("{name}.wh"), ParamGroup::Head, init.normal(hidden, 4 * hidden, 1.0));
        let mut bias = Tensor::zeros(1, 4 * hidden);
        bias.data_mut()[hidden..2 * hidden].fill(T::one());
        let b = store.add(format!("{name}.b"), ParamGroup::Head, bias);
        Self { hidden, wx, wh, b }
    }

    /// Runs over the rows of `x` from first to last with zero initial state;
    /// returns the `T x H` hidden sequence.
    pub fn run<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, x: Var) -> Result<Var> {
        let steps = tape.value(x).rows();
        if steps == 0 {
            return Err(config("recurrent layer needs at least one time step"));
        }
        let hdim = self.hidden;
        let pre = affine(tape, x, p[self.wx], Some(p[self.b]))?;
        let mut state: Option<(Var, Var)> = None;
        let mut hs = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut z = tape.slice_rows(pre, t, 1)?;
            if let Some((h, _)) = state {
                let rec = tape.matmul(h, p[self.wh])?;
                z = tape.add(z, rec)?;
            }
            let i = tape.slice_cols(z, 0, hdim)?;
            let i = tape.sigmoid(i);
            let g = tape.slice_cols(z, 2 * hdim, hdim)?;
            let g = tape.tanh(g);
            let o = tape.slice_cols(z, 3 * hdim, hdim)?;
            let o = tape.sigmoid(o);
            let mut c = tape.mul(i, g)?;
            if let Some((_, c_prev)) = state {
                let f = tape.slice_cols(z, hdim, hdim)?;
                let f = tape.sigmoid(f);
                let keep = tape.mul(f, c_prev)?;
                c = tape.add(c, keep)?;
            }
            let tc = tape.tanh(c);
            let h = tape.mul(o, tc)?;
            hs.push(h);
            state = Some((h, c));
        }
        tape.concat_rows(&hs)
    }
}

#[derive(Clone, Debug)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

impl BiLstm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, name: &str, input: usize, hidden: usize) -> Self {
        Self {
            forward: LstmCell::new(store, init, &format!("{name}.fwd"), input, hidden),
            backward: LstmCell::new(store, init, &format!("{name}.bwd"), input, hidden),
        }
    }

    /// `T x 2H`: forward states then backward states per step.
    pub fn run<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, x: Var) -> Result<Var> {
        let f = self.forward.run(tape, p, x)?;
        let rx = tape.reverse_rows(x);
        let rb = self.backward.run(tape, p, rx)?;
        let b = tape.reverse_rows(rb);
        tape.concat_cols(&[f, b])
    }
}

#[derive(Clone, Debug)]
pub struct Classifier {
    pub layers: Vec<BiLstm>,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

impl Classifier {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, input: usize, hidden: &[usize]) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(config(format!("invalid recurrent hidden sizes {hidden:?}")));
        }
        let mut width = input;
        let mut layers = Vec::with_capacity(hidden.len());
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(BiLstm::new(store, init, &format!("bilstm{}", i + 1), width, h));
            width = 2 * h;
        }
        let head_w = store.add("head.w", ParamGroup::Head, init.normal(width, 2, 1.0));
        let head_b = store.add("head.b", ParamGroup::Head, Tensor::zeros(1, 2));
        Ok(Self { layers, head_w, head_b })
    }

    pub fn sequence<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            h = layer.run(tape, p, h)?;
        }
        Ok(h)
    }

    /// Time-mean then affine to `1 x 2` logits.
    pub fn pool_and_logits<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, seq: Var) -> Result<Var> {
        if tape.value(seq).rows() == 0 {
            return Err(config("cannot pool an empty sequence"));
        }
        let pooled = tape.mean_rows(seq);
        affine(tape, pooled, p[self.head_w], Some(p[self.head_b]))
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, x: Var) -> Result<Var> {
        let seq = self.sequence(tape, p, x)?;
        self.pool_and_logits(tape, p, seq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::randn;

    fn eval_seq(store: &ParamStore<f64>, layer: &BiLstm, x: &Tensor<f64>) -> Tensor<f64> {
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let y = layer.run(&mut tape, &p, xv).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn zero_everything_gives_zero_output() {
        let mut store = ParamStore::<f64>::new();
        let c = Classifier::new(&mut store, &mut Init::new(0), 3, &[4, 2]).unwrap();
        for (_, p) in store.iter_mut() {
            p.value = Tensor::zeros_like(&p.value);
        }
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let x = tape.constant(Tensor::zeros(5, 3));
        let seq = c.sequence(&mut tape, &p, x).unwrap();
        assert_eq!(tape.value(seq).shape(), &[5, 4]);
        assert!(tape.value(seq).data().iter().all(|&v| v == 0.0));
        let logits = c.pool_and_logits(&mut tape, &p, seq).unwrap();
        assert_eq!(tape.value(logits).data(), &[0.0, 0.0]);
    }

    #[test]
    fn reversal_swaps_directions() {
        let mut store = ParamStore::<f64>::new();
        let layer = BiLstm::new(&mut store, &mut Init::new(3), "l", 3, 4);
        let x = randn::<f64>(6, 3, 9);
        let y = eval_seq(&store, &layer, &x);

        let mut swapped = store.clone();
        for (a, b) in [
            (layer.forward.wx, layer.backward.wx),
            (layer.forward.wh, layer.backward.wh),
            (layer.forward.b, layer.backward.b),
        ] {
            *swapped.get_mut(a) = store.get(b).clone();
            *swapped.get_mut(b) = store.get(a).clone();
        }
        let rows: Vec<&[f64]> = (0..6).rev().map(|r| x.row(r)).collect();
        let xr = Tensor::from_rows(&rows).unwrap();
        let yr = eval_seq(&swapped, &layer, &xr);
        for t in 0..6 {
            let (a, b) = (y.row(t), yr.row(5 - t));
            for k in 0..4 {
                assert!((a[k] - b[4 + k]).abs() < 1e-12);
                assert!((a[4 + k] - b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_step_uses_same_frame_both_ways() {
        let mut store = ParamStore::<f64>::new();
        let layer = BiLstm::new(&mut store, &mut Init::new(5), "l", 2, 3);
        *store.get_mut(layer.backward.wx) = store.get(layer.forward.wx).clone();
        let y = eval_seq(&store, &layer, &randn(1, 2, 1));
        assert_eq!(y.shape(), &[1, 6]);
        assert_eq!(&y.data()[..3], &y.data()[3..]);
    }

    #[test]
    fn pooling_examples() {
        let mut store = ParamStore::<f64>::new();
        let c = Classifier::new(&mut store, &mut Init::new(0), 2, &[1]).unwrap();
        *store.get_mut(c.head_w) = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let seq = tape.constant(Tensor::from_rows(&[&[1.0, 3.0], &[3.0, 1.0]]).unwrap());
        let l = c.pool_and_logits(&mut tape, &p, seq).unwrap();
        assert_eq!(tape.value(l).data(), &[2.0, 2.0]);
        let flat = tape.constant(Tensor::from_rows(&[&[0.5, -1.0], &[0.5, -1.0], &[0.5, -1.0]]).unwrap());
        let l = c.pool_and_logits(&mut tape, &p, flat).unwrap();
        assert_eq!(tape.value(l).data(), &[0.5, -1.0]);
    }
}
