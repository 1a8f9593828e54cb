//! Temporal branch: a layered convolutional encoder standing in for a
//! pre-trained speech model, layer-weighted aggregation, and breath-mask
//! feature gating.

use crate::breathmask::BreathMask;
use crate::diff::{affine, Tape, Tensor, Var};
use crate::error::{config, input, Result};
use crate::params::{Binding, Init, ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;

/// Samples per encoder frame.
pub const WINDOW: usize = 400;
/// Samples between encoder frames.
pub const HOP: usize = 320;
/// Taps of the causal convolution in layers after the first.
pub const CONV_TAPS: usize = 3;

/// `floor((S - 400) / 320) + 1`.
pub fn frame_count(samples: usize) -> Result<usize> {
    if samples < WINDOW {
        return Err(input(format!("waveform of {samples} samples is shorter than one {WINDOW}-sample window")));
    }
    Ok((samples - WINDOW) / HOP + 1)
}

/// Per-layer encoder outputs, `L x T x D`.
#[derive(Clone, Debug)]
pub struct LayerStack<T> {
    layers: Vec<Tensor<T>>,
}

impl<T: Scalar> LayerStack<T> {
    pub fn new(layers: Vec<Tensor<T>>) -> Result<Self> {
        let first = layers.first().ok_or_else(|| config("layer stack needs at least one layer"))?;
        let dims = (first.rows(), first.cols());
        if layers.iter().any(|h| (h.rows(), h.cols()) != dims) {
            return Err(config("layer stack layers differ in shape"));
        }
        Ok(Self { layers })
    }

    /// `(L, T, D)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.layers.len(), self.layers[0].rows(), self.layers[0].cols())
    }

    pub fn layers(&self) -> &[Tensor<T>] {
        &self.layers
    }
}

/// Frequency bins of the first-layer log-power front end.
pub const SPEC_BINS: usize = 64;
/// Power floor inside the log, about -60 dB re full scale.
const POWER_FLOOR: f64 = 1e-6;
/// Maps log power from roughly `[-14, 0]` to roughly `[-2, 2]`.
const LOG_OFFSET: f64 = 7.0;
const LOG_SCALE: f64 = 1.0 / 3.5;

/// Hann-windowed cosine columns then sine columns, bin centres spread
/// evenly up to Nyquist, scaled so unit white noise gives unit power per bin.
fn spectral_basis<T: Scalar>(bins: usize) -> Tensor<T> {
    let hann: Vec<f64> = (0..WINDOW)
        .map(|n| 0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / WINDOW as f64).cos())
        .collect();
    let norm = (2.0 / hann.iter().map(|h| h * h).sum::<f64>()).sqrt();
    let mut data = vec![T::zero(); WINDOW * 2 * bins];
    for (n, h) in hann.iter().enumerate() {
        for k in 0..bins {
            // Cycles per sample, below 0.5.
            let f = (k as f64 + 0.5) / (2.0 * bins as f64);
            let phase = std::f64::consts::TAU * f * n as f64;
            data[n * 2 * bins + k] = T::lit(norm * h * phase.cos());
            data[n * 2 * bins + bins + k] = T::lit(norm * h * phase.sin());
        }
    }
    Tensor::matrix(WINDOW, 2 * bins, data).expect("positive dims")
}

/// Sums each cosine column with its sine partner.
fn pair_sum<T: Scalar>(bins: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); 2 * bins * bins];
    for k in 0..bins {
        data[k * bins + k] = T::one();
        data[(bins + k) * bins + k] = T::one();
    }
    Tensor::matrix(2 * bins, bins, data).expect("positive dims")
}

/// Layer 1 is a learnable windowed-sinusoid analysis of each 400-sample
/// frame, reduced to log power and projected to `D`; layers 2..L apply a
/// residual causal convolution over frames.
#[derive(Clone, Debug)]
pub struct ToyEncoder {
    layers: usize,
    dim: usize,
    basis: ParamId,
    w_in: ParamId,
    b_in: ParamId,
    convs: Vec<(ParamId, ParamId)>,
}

impl ToyEncoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, layers: usize, dim: usize) -> Result<Self> {
        if layers == 0 || dim == 0 {
            return Err(config(format!("encoder needs L >= 1 and D >= 1, got L={layers}, D={dim}")));
        }
        let basis = store.add("encoder.basis", ParamGroup::Encoder, spectral_basis(SPEC_BINS));
        let w_in = store.add("encoder.in.w", ParamGroup::Encoder, init.normal(SPEC_BINS, dim, 1.0));
        let b_in = store.add("encoder.in.b", ParamGroup::Encoder, Tensor::zeros(1, dim));
        let convs = (1..layers)
            .map(|l| {
                let w = store.add(
                    format!("encoder.conv{l}.w"),
                    ParamGroup::Encoder,
                    init.normal(CONV_TAPS * dim, dim, 0.5),
                );
                let b = store.add(format!("encoder.conv{l}.b"), ParamGroup::Encoder, Tensor::zeros(1, dim));
                (w, b)
            })
            .collect();
        Ok(Self { layers, dim, basis, w_in, b_in, convs })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `wave` is a `1 x S` node; returns one `T x D` node per layer.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, wave: Var) -> Result<Vec<Var>> {
        frame_count(tape.value(wave).len())?;
        let frames = tape.frame(wave, WINDOW, HOP)?;
        let parts = tape.matmul(frames, p[self.basis])?;
        let squares = tape.mul(parts, parts)?;
        let pairs = tape.constant(pair_sum(SPEC_BINS));
        let power = tape.matmul(squares, pairs)?;
        let floored = tape.add_scalar(power, T::lit(POWER_FLOOR));
        let logp = tape.ln(floored);
        let logp = tape.add_scalar(logp, T::lit(LOG_OFFSET));
        let logp = tape.scale(logp, T::lit(LOG_SCALE));
        let pre = affine(tape, logp, p[self.w_in], Some(p[self.b_in]))?;
        let mut h = tape.tanh(pre);
        let mut outs = vec![h];
        for &(w, b) in &self.convs {
            let taps: Vec<Var> = (0..CONV_TAPS).map(|k| if k == 0 { h } else { tape.shift_rows(h, k) }).collect();
            let stacked = tape.concat_cols(&taps)?;
            let conv = affine(tape, stacked, p[w], Some(p[b]))?;
            let act = tape.tanh(conv);
            h = tape.add(h, act)?;
            outs.push(h);
        }
        Ok(outs)
    }

    /// Value-level convenience: run the encoder on raw samples.
    pub fn stack<T: Scalar>(&self, store: &ParamStore<T>, samples: &[T]) -> Result<LayerStack<T>> {
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let wave = tape.constant(Tensor::matrix(1, samples.len(), samples.to_vec())?);
        let outs = self.forward(&mut tape, &p, wave)?;
        LayerStack::new(outs.into_iter().map(|v| tape.value(v).clone()).collect())
    }
}

/// Layer scoring head: `w_i = sigmoid(u . mean_t(h_i) + b)`.
#[derive(Clone, Debug)]
pub struct Sls {
    pub u: ParamId,
    pub b: ParamId,
}

pub struct SlsOutput {
    pub features: Var,
    /// One `1 x 1` node per layer.
    pub weights: Vec<Var>,
}

impl Sls {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, dim: usize) -> Self {
        let u = store.add("sls.u", ParamGroup::Head, init.normal(dim, 1, 1.0));
        let b = store.add("sls.b", ParamGroup::Head, Tensor::zeros(1, 1));
        Self { u, b }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, layers: &[Var]) -> Result<SlsOutput> {
        let first = *layers.first().ok_or_else(|| config("aggregation needs at least one layer"))?;
        let shape = tape.value(first).shape().to_vec();
        let mut acc: Option<Var> = None;
        let mut weights = Vec::with_capacity(layers.len());
        for &h in layers {
            if tape.value(h).shape() != shape.as_slice() {
                return Err(config("aggregation layers differ in shape"));
            }
            let pooled = tape.mean_rows(h);
            let score = affine(tape, pooled, p[self.u], Some(p[self.b]))?;
            let w = tape.sigmoid(score);
            weights.push(w);
            let weighted = tape.mul_scalar_var(h, w)?;
            acc = Some(match acc {
                None => weighted,
                Some(a) => tape.add(a, weighted)?,
            });
        }
        Ok(SlsOutput { features: acc.expect("at least one layer"), weights })
    }
}

/// Breath-driven residual gating: `G_t = 1 + sigmoid(W2 relu(W1 m_t))`.
#[derive(Clone, Debug)]
pub struct BreathFilm {
    pub w1: ParamId,
    pub w2: ParamId,
}

pub struct FilmOutput {
    pub features: Var,
    pub gate: Var,
}

impl BreathFilm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, hidden: usize, dim: usize) -> Result<Self> {
        if hidden == 0 {
            return Err(config("gating MLP needs at least one hidden unit"));
        }
        let w1 = store.add("film.w1", ParamGroup::Head, init.uniform(1, hidden, 1.0));
        let w2 = store.add("film.w2", ParamGroup::Head, init.normal(hidden, dim, 1.0));
        Ok(Self { w1, w2 })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, x: Var, mask: &BreathMask) -> Result<FilmOutput> {
        let frames = tape.value(x).rows();
        if mask.len() != frames {
            return Err(input(format!(
                "breath mask has {} frames but the temporal features have T={frames}",
                mask.len()
            )));
        }
        // The MLP sees only the scalar bit, so evaluate it once per bit value.
        let levels = tape.constant(Tensor::matrix(2, 1, vec![T::zero(), T::one()])?);
        let hidden = tape.matmul(levels, p[self.w1])?;
        let hidden = tape.relu(hidden);
        let logits = tape.matmul(hidden, p[self.w2])?;
        let g = tape.sigmoid(logits);
        let gate_levels = tape.add_scalar(g, T::one());
        let index: Vec<usize> = mask.bits().iter().map(|&b| usize::from(b)).collect();
        let gate = tape.gather_rows(gate_levels, &index)?;
        let features = tape.mul(gate, x)?;
        Ok(FilmOutput { features, gate })
    }
}
