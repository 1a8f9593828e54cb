//! Frequency branch: pre-emphasis, a learnable sinc band-pass filterbank,
//! adaptive max pooling to 32 steps, batch normalization, SELU, and a
//! per-step projection to the shared width `D`.

use log::warn;

use crate::breathmask::Waveform;
use crate::diff::{affine, BatchStats, Tape, Tensor, Var};
use crate::error::{config, input, Result};
use crate::params::{Binding, ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;

pub const POOL_BINS: usize = 32;
pub const DEFAULT_PRE_EMPHASIS: f64 = 0.97;
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
/// Smallest allowed `f_high - f_low`, in Hz.
pub const MIN_BAND_HZ: f64 = 1.0;
const MIN_LOW_HZ: f64 = 30.0;

/// `y[0] = x[0]`, `y[n] = x[n] - c x[n-1]`.
pub fn pre_emphasis(w: &Waveform, c: f64) -> Result<Waveform> {
    if !(0.0..=1.0).contains(&c) {
        return Err(config(format!("pre-emphasis coefficient {c} outside [0, 1]")));
    }
    let x = w.samples();
    let mut y = Vec::with_capacity(x.len());
    y.push(x[0]);
    y.extend(x.windows(2).map(|p| p[1] - c * p[0]));
    Waveform::new(y, w.sample_rate())
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Mel-spaced `(f_low, f_high)` pairs covering `[30 Hz, Nyquist]`.
pub fn mel_cutoffs(filters: usize, sample_rate: f64) -> Vec<(f64, f64)> {
    let top = sample_rate / 2.0 - MIN_BAND_HZ;
    let (lo, hi) = (hz_to_mel(MIN_LOW_HZ), hz_to_mel(top));
    let edges: Vec<f64> = (0..=filters).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / filters as f64)).collect();
    edges.windows(2).map(|e| (e[0], e[1])).collect()
}

/// A fixed set of band-pass filters (value-level view of the branch front end).
#[derive(Clone, Debug)]
pub struct SincBank {
    pub cutoffs: Vec<(f64, f64)>,
    pub taps: usize,
    pub stride: usize,
    pub sample_rate: f64,
}

impl SincBank {
    pub fn validate(&self) -> Result<()> {
        if self.taps % 2 == 0 {
            return Err(config(format!("kernel length must be odd, got {}", self.taps)));
        }
        if self.stride == 0 {
            return Err(config("filterbank stride must be positive"));
        }
        let nyq = self.sample_rate / 2.0;
        for &(lo, hi) in &self.cutoffs {
            if !(0.0 <= lo && lo < hi && hi <= nyq) {
                return Err(config(format!("filter ({lo}, {hi}) violates 0 <= f_low < f_high <= {nyq}")));
            }
        }
        Ok(())
    }

    /// `F x taps` Hamming-windowed kernels.
    pub fn kernels<T: Scalar>(&self) -> Result<Tensor<T>> {
        self.validate()?;
        let mut tape = Tape::new();
        let (low, band) = self.cutoff_nodes(&mut tape)?;
        let k = tape.sinc_kernels(low, band, self.taps, T::lit(self.sample_rate))?;
        Ok(tape.value(k).clone())
    }

    fn cutoff_nodes<T: Scalar>(&self, tape: &mut Tape<T>) -> Result<(Var, Var)> {
        let f = self.cutoffs.len();
        let low = Tensor::matrix(f, 1, self.cutoffs.iter().map(|c| T::lit(c.0)).collect())?;
        let band = Tensor::matrix(f, 1, self.cutoffs.iter().map(|c| T::lit(c.1 - c.0)).collect())?;
        Ok((tape.constant(low), tape.constant(band)))
    }

    /// Filter a signal: output is `F x T'` with `T' = (S - taps) / stride + 1`.
    pub fn apply<T: Scalar>(&self, samples: &[T]) -> Result<Tensor<T>> {
        self.validate()?;
        let mut tape = Tape::new();
        let (low, band) = self.cutoff_nodes(&mut tape)?;
        let k = tape.sinc_kernels(low, band, self.taps, T::lit(self.sample_rate))?;
        let x = tape.constant(Tensor::matrix(1, samples.len(), samples.to_vec())?);
        let frames = tape.frame(x, self.taps, self.stride)?;
        let y = tape.matmul_nt(k, frames)?;
        Ok(tape.value(y).clone())
    }
}

/// Running batch-norm statistics, one entry per filter channel.
#[derive(Clone, Debug, PartialEq)]
pub struct BnState<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BnState<T> {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![T::zero(); channels], var: vec![T::one(); channels] }
    }

    pub fn update(&mut self, batch: &BatchStats<T>) {
        let m = T::lit(BN_MOMENTUM);
        for (r, &b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = (T::one() - m) * *r + m * b;
        }
        for (r, &b) in self.var.iter_mut().zip(&batch.var) {
            *r = (T::one() - m) * *r + m * b;
        }
    }
}

/// Batch statistics (training) or running statistics (inference).
pub enum BnMode<'a, T> {
    Batch,
    Running(&'a BnState<T>),
}

#[derive(Clone, Debug)]
pub struct FreqBranch {
    pub low: ParamId,
    pub band: ParamId,
    pub bn_gamma: ParamId,
    pub bn_beta: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub filters: usize,
    pub taps: usize,
    pub stride: usize,
    pub pre_emphasis: f64,
    pub sample_rate: f64,
}

pub struct FreqOutput<T> {
    /// One `32 x D` node per input.
    pub features: Vec<Var>,
    pub batch_stats: Option<BatchStats<T>>,
}

impl FreqBranch {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut crate::params::Init,
        filters: usize,
        taps: usize,
        stride: usize,
        dim: usize,
        pre_emphasis: f64,
        sample_rate: f64,
    ) -> Result<Self> {
        if filters == 0 || taps % 2 == 0 || stride == 0 {
            return Err(config(format!(
                "invalid filterbank: F={filters}, K={taps} (must be odd), stride={stride}"
            )));
        }
        let cut = mel_cutoffs(filters, sample_rate);
        let low = store.add(
            "freq.low_hz",
            ParamGroup::Head,
            Tensor::matrix(filters, 1, cut.iter().map(|c| T::lit(c.0)).collect())?,
        );
        let band = store.add(
            "freq.band_hz",
            ParamGroup::Head,
            Tensor::matrix(filters, 1, cut.iter().map(|c| T::lit(c.1 - c.0)).collect())?,
        );
        let bn_gamma = store.add("freq.bn.gamma", ParamGroup::Head, Tensor::filled(filters, 1, T::one()));
        let bn_beta = store.add("freq.bn.beta", ParamGroup::Head, Tensor::zeros(filters, 1));
        let proj_w = store.add("freq.proj.w", ParamGroup::Head, init.normal(filters, dim, 1.0));
        let proj_b = store.add("freq.proj.b", ParamGroup::Head, Tensor::zeros(1, dim));
        Ok(Self { low, band, bn_gamma, bn_beta, proj_w, proj_b, filters, taps, stride, pre_emphasis, sample_rate })
    }

    /// Number of filter output steps for `samples` input samples.
    pub fn steps(&self, samples: usize) -> Option<usize> {
        (samples >= self.taps).then(|| (samples - self.taps) / self.stride + 1)
    }

    /// Current cutoffs in Hz as `(f_low, f_high)`.
    pub fn cutoffs<T: Scalar>(&self, store: &ParamStore<T>) -> Vec<(f64, f64)> {
        let low = store.get(self.low).to_f64_vec();
        let band = store.get(self.band).to_f64_vec();
        low.iter().zip(&band).map(|(&l, &b)| (l, l + b.abs())).collect()
    }

    /// Restore `0 <= f_low < f_high <= Nyquist` after a parameter update.
    pub fn enforce_cutoffs<T: Scalar>(&self, store: &mut ParamStore<T>) {
        let nyq = self.sample_rate / 2.0;
        let low: Vec<f64> = store.get(self.low).to_f64_vec();
        let band: Vec<f64> = store.get(self.band).to_f64_vec();
        let mut new_low = Vec::with_capacity(low.len());
        let mut new_band = Vec::with_capacity(low.len());
        for (i, (&l, &b)) in low.iter().zip(&band).enumerate() {
            let l2 = l.clamp(0.0, nyq - MIN_BAND_HZ);
            let mut b2 = b.abs().max(MIN_BAND_HZ);
            if l2 + b2 > nyq {
                warn!("filter {i}: upper cutoff {:.1} Hz above Nyquist, clamped", l2 + b2);
                b2 = nyq - l2;
            }
            new_low.push(T::lit(l2));
            new_band.push(T::lit(b2));
        }
        store.get_mut(self.low).data_mut().copy_from_slice(&new_low);
        store.get_mut(self.band).data_mut().copy_from_slice(&new_band);
    }

    /// Band-pass responses `F x T'` for one `1 x S` node (before pooling).
    pub fn filter_map<T: Scalar>(&self, tape: &mut Tape<T>, kernels: Var, wave: Var) -> Result<Var> {
        let s = tape.value(wave).len();
        let steps = self.steps(s).unwrap_or(0);
        if steps < POOL_BINS {
            return Err(input(format!(
                "waveform of {s} samples yields {steps} filter steps, fewer than {POOL_BINS}"
            )));
        }
        let pre = tape.pre_emphasis(wave, T::lit(self.pre_emphasis));
        let frames = tape.frame(pre, self.taps, self.stride)?;
        tape.matmul_nt(kernels, frames)
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Binding,
        waves: &[Var],
        bn: BnMode<'_, T>,
    ) -> Result<FreqOutput<T>> {
        let kernels = tape.sinc_kernels(p[self.low], p[self.band], self.taps, T::lit(self.sample_rate))?;
        let mut pooled = Vec::with_capacity(waves.len());
        for &w in waves {
            let map = self.filter_map(tape, kernels, w)?;
            pooled.push(tape.max_pool_cols(map, POOL_BINS)?);
        }
        let stacked = tape.concat_rows(&pooled)?;
        let eps = T::lit(BN_EPS);
        let (normed, batch_stats) = match bn {
            BnMode::Batch => tape.batch_norm(stacked, p[self.bn_gamma], p[self.bn_beta], self.filters, eps, None)?,
            BnMode::Running(s) => tape.batch_norm(
                stacked,
                p[self.bn_gamma],
                p[self.bn_beta],
                self.filters,
                eps,
                Some((&s.mean, &s.var)),
            )?,
        };
        let act = tape.selu(normed);
        let mut features = Vec::with_capacity(waves.len());
        for i in 0..waves.len() {
            let block = tape.slice_rows(act, i * self.filters, self.filters)?;
            let steps = tape.transpose(block);
            features.push(affine(tape, steps, p[self.proj_w], Some(p[self.proj_b]))?);
        }
        Ok(FreqOutput { features, batch_stats })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp;
    use std::f64::consts::PI;

    fn wave(x: Vec<f64>) -> Waveform {
        Waveform::new(x, 16_000).unwrap()
    }

    #[test]
    fn pre_emphasis_cases() {
        let w = wave(vec![1.0, 2.0, 3.0]);
        assert_eq!(pre_emphasis(&w, 0.0).unwrap(), w);
        let y = pre_emphasis(&w, 0.97).unwrap();
        for (a, b) in y.samples().iter().zip([1.0, 1.03, 1.06]) {
            assert!((a - b).abs() < 1e-12);
        }
        let c = pre_emphasis(&wave(vec![1.0; 5]), 1.0).unwrap();
        assert_eq!(c.samples(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(pre_emphasis(&w, 1.5).is_err());
    }

    fn bank(lo: f64, hi: f64, taps: usize, stride: usize) -> SincBank {
        SincBank { cutoffs: vec![(lo, hi)], taps, stride, sample_rate: 16_000.0 }
    }

    #[test]
    fn band_pass_response_separates_pass_and_stop() {
        let k = bank(1000.0, 2000.0, 129, 1).kernels::<f64>().unwrap();
        let h = k.row(0);
        let pass = dsp::response_magnitude(h, 1500.0, 16_000.0);
        let stop = dsp::response_magnitude(h, 4000.0, 16_000.0);
        assert!(20.0 * (pass / stop).log10() >= 20.0, "pass {pass} stop {stop}");
    }

    #[test]
    fn band_pass_tone_rms_ratio() {
        let b = bank(1000.0, 2000.0, 129, 1);
        let tone = |f: f64| (0..4000).map(|n| (2.0 * PI * f * n as f64 / 16_000.0).sin()).collect::<Vec<f64>>();
        let inband = b.apply(&tone(1500.0)).unwrap();
        let outband = b.apply(&tone(4000.0)).unwrap();
        let ratio = dsp::rms(inband.data()) / dsp::rms(outband.data());
        assert!(ratio >= 10.0, "ratio {ratio}");
    }

    #[test]
    fn full_band_filter_is_near_identity() {
        let b = bank(0.0, 8000.0, 65, 1);
        let x: Vec<f64> = crate::diff::randn::<f64>(1, 2000, 5).into_data();
        let y = b.apply(&x).unwrap();
        let half = 32;
        let aligned = &x[half..half + y.cols()];
        let dot: f64 = aligned.iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let corr = dot / (dsp::energy(aligned) * dsp::energy(y.data())).sqrt();
        assert!(corr > 0.99, "corr {corr}");
    }

    #[test]
    fn invalid_banks_are_rejected() {
        assert!(bank(2000.0, 1000.0, 65, 1).validate().is_err());
        assert!(bank(0.0, 9000.0, 65, 1).validate().is_err());
        assert!(bank(0.0, 1000.0, 64, 1).validate().is_err());
    }

    #[test]
    fn mel_init_is_ordered_and_in_range() {
        let c = mel_cutoffs(16, 16_000.0);
        assert_eq!(c.len(), 16);
        for w in c.windows(2) {
            assert!(w[0].0 < w[1].0);
        }
        for &(lo, hi) in &c {
            assert!(0.0 <= lo && lo < hi && hi <= 8000.0);
        }
    }

    #[test]
    fn cutoffs_are_clamped_into_range() {
        let mut store = ParamStore::<f64>::new();
        let fb = FreqBranch::new(&mut store, &mut crate::params::Init::new(0), 3, 33, 16, 4, 0.97, 16_000.0).unwrap();
        store.get_mut(fb.low).data_mut().copy_from_slice(&[-20.0, 7990.0, 100.0]);
        store.get_mut(fb.band).data_mut().copy_from_slice(&[50.0, 500.0, -0.0]);
        fb.enforce_cutoffs(&mut store);
        for (lo, hi) in fb.cutoffs(&store) {
            assert!(0.0 <= lo && lo < hi && hi <= 8000.0, "({lo}, {hi})");
        }
    }

    #[test]
    fn pooling_and_shape_contract() {
        let mut tape = Tape::<f64>::new();
        let m = tape.constant(Tensor::from_rows(&[&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]]).unwrap());
        let p = tape.max_pool_cols(m, 2).unwrap();
        assert_eq!(tape.value(p), &Tensor::from_rows(&[&[2.0, 4.0], &[4.0, 2.0]]).unwrap());

        let mut store = ParamStore::<f64>::new();
        let fb = FreqBranch::new(&mut store, &mut crate::params::Init::new(0), 4, 33, 64, 6, 0.97, 16_000.0).unwrap();
        let mut tape = Tape::new();
        let b = store.bind_frozen(&mut tape);
        let x = tape.constant(crate::diff::randn(1, 33 + 64 * 40, 3));
        let out = fb.forward(&mut tape, &b, &[x], BnMode::Running(&BnState::new(4))).unwrap();
        assert_eq!(tape.value(out.features[0]).shape(), &[32, 6]);

        let short = tape.constant(crate::diff::randn(1, 33 + 64 * 20, 3));
        assert!(matches!(
            fb.forward(&mut tape, &b, &[short], BnMode::Batch),
            Err(crate::Error::Input(_))
        ));
    }
}
