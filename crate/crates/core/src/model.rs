//! The full detector: temporal branch (encoder, layer weighting, breath
//! gating), frequency branch, cross-attention fusion and BiLSTM classifier.

use serde::{Deserialize, Serialize};

use crate::breathmask::BreathMask;
use crate::classifier::Classifier;
use crate::diff::{BatchStats, Tape, Tensor, Var};
use crate::error::{config, input, Result};
use crate::freq::{BnMode, BnState, FreqBranch, POOL_BINS};
use crate::fusion::CrossAttention;
use crate::params::{Binding, Init, ParamStore};
use crate::scalar::Scalar;
use crate::temporal::{frame_count, BreathFilm, Sls, ToyEncoder};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Encoder layers `L`.
    pub layers: usize,
    /// Shared feature width `D`.
    pub dim: usize,
    /// Sinc filters `F`.
    pub filters: usize,
    /// Sinc kernel length `K` (odd).
    pub taps: usize,
    pub stride: usize,
    pub heads: usize,
    pub lstm_hidden: Vec<usize>,
    pub film_hidden: usize,
    pub pre_emphasis: f64,
    pub sample_rate: u32,
    /// Fixed input length after duration normalization.
    pub samples: usize,
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            layers: 4,
            dim: 64,
            filters: 16,
            taps: 65,
            stride: 160,
            heads: 4,
            lstm_hidden: vec![64, 32],
            film_hidden: 512,
            pre_emphasis: crate::freq::DEFAULT_PRE_EMPHASIS,
            sample_rate: crate::breathmask::SAMPLE_RATE,
            samples: crate::breathmask::TARGET_SAMPLES,
        }
    }

    pub fn paper() -> Self {
        Self {
            layers: 24,
            dim: 1024,
            filters: 64,
            taps: 129,
            stride: 160,
            heads: 8,
            lstm_hidden: vec![512, 256],
            film_hidden: 512,
            ..Self::desk()
        }
    }

    pub fn frames(&self) -> Result<usize> {
        frame_count(self.samples)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.dim == 0 || self.filters == 0 || self.film_hidden == 0 {
            return Err(config("layers, dim, filters and film_hidden must be positive"));
        }
        if self.taps % 2 == 0 {
            return Err(config(format!("taps must be odd, got {}", self.taps)));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(config(format!("heads={} must divide dim={}", self.heads, self.dim)));
        }
        if self.lstm_hidden.is_empty() || self.lstm_hidden.contains(&0) {
            return Err(config("lstm_hidden must list positive sizes"));
        }
        if !(0.0..=1.0).contains(&self.pre_emphasis) {
            return Err(config("pre_emphasis must lie in [0, 1]"));
        }
        self.frames()?;
        let steps = (self.samples.saturating_sub(self.taps)) / self.stride.max(1) + 1;
        if self.stride == 0 || self.samples < self.taps || steps < POOL_BINS {
            return Err(config(format!(
                "stride {} and taps {} leave {} filter steps for {} samples; need {POOL_BINS}",
                self.stride, self.taps, steps, self.samples
            )));
        }
        Ok(())
    }
}

/// Architectural ablations; loss ablations live in the loss weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub no_film: bool,
    pub no_freq: bool,
}

pub struct BreathNet<T> {
    pub config: ModelConfig,
    pub ablation: Ablation,
    pub store: ParamStore<T>,
    pub bn: BnState<T>,
    pub encoder: ToyEncoder,
    pub sls: Sls,
    pub film: BreathFilm,
    pub freq: FreqBranch,
    pub attention: CrossAttention,
    pub classifier: Classifier,
}

/// Tape handles of one batched forward pass.
pub struct Forward<T> {
    /// `N x 2`, columns `[bonafide, spoof]`.
    pub logits: Var,
    /// One `1 x D` time-mean of the fused features per input.
    pub embeddings: Vec<Var>,
    pub temporal: Vec<Var>,
    pub frequency: Vec<Var>,
    pub fused: Vec<Var>,
    pub gates: Vec<Var>,
    pub layer_weights: Vec<Vec<Var>>,
    pub attention: Vec<Vec<Var>>,
    pub bn_stats: Option<BatchStats<T>>,
}

/// Per-utterance inference output.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference<T> {
    pub logits: [T; 2],
    pub embedding: Vec<T>,
}

impl<T: Scalar> Inference<T> {
    /// `logit(bonafide) - logit(spoof)`.
    pub fn score(&self) -> T {
        self.logits[0] - self.logits[1]
    }
}

impl<T: Scalar> BreathNet<T> {
    pub fn new(cfg: ModelConfig, ablation: Ablation, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if ablation.no_freq && cfg.frames()? < POOL_BINS {
            return Err(config(format!("{} encoder frames cannot be pooled to {POOL_BINS} steps", cfg.frames()?)));
        }
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let encoder = ToyEncoder::new(&mut store, &mut init, cfg.layers, cfg.dim)?;
        let sls = Sls::new(&mut store, &mut init, cfg.dim);
        let film = BreathFilm::new(&mut store, &mut init, cfg.film_hidden, cfg.dim)?;
        let freq = FreqBranch::new(
            &mut store,
            &mut init,
            cfg.filters,
            cfg.taps,
            cfg.stride,
            cfg.dim,
            cfg.pre_emphasis,
            f64::from(cfg.sample_rate),
        )?;
        let attention = CrossAttention::new(&mut store, &mut init, cfg.dim, cfg.heads)?;
        let classifier = Classifier::new(&mut store, &mut init, cfg.dim, &cfg.lstm_hidden)?;
        let bn = BnState::new(cfg.filters);
        Ok(Self { config: cfg, ablation, store, bn, encoder, sls, film, freq, attention, classifier })
    }

    /// `waves` are `1 x S` nodes; `train` selects batch statistics for the
    /// frequency branch normalization.
    pub fn forward(&self, tape: &mut Tape<T>, p: &Binding, waves: &[Var], masks: &[BreathMask], train: bool) -> Result<Forward<T>> {
        if waves.is_empty() {
            return Err(input("empty batch"));
        }
        if waves.len() != masks.len() {
            return Err(input(format!("{} waveforms but {} masks", waves.len(), masks.len())));
        }
        let mut temporal = Vec::with_capacity(waves.len());
        let mut gates = Vec::new();
        let mut layer_weights = Vec::with_capacity(waves.len());
        for (&w, m) in waves.iter().zip(masks) {
            let layers = self.encoder.forward(tape, p, w)?;
            let agg = self.sls.forward(tape, p, &layers)?;
            layer_weights.push(agg.weights);
            let x = if self.ablation.no_film {
                agg.features
            } else {
                let out = self.film.forward(tape, p, agg.features, m)?;
                gates.push(out.gate);
                out.features
            };
            temporal.push(x);
        }

        let mut frequency = Vec::new();
        let mut attention = Vec::new();
        let mut bn_stats = None;
        let fused: Vec<Var> = if self.ablation.no_freq {
            temporal.iter().map(|&x| tape.avg_pool_rows(x, POOL_BINS)).collect::<Result<_>>()?
        } else {
            let mode = if train { BnMode::Batch } else { BnMode::Running(&self.bn) };
            let out = self.freq.forward(tape, p, waves, mode)?;
            bn_stats = out.batch_stats;
            frequency = out.features;
            let mut fused = Vec::with_capacity(waves.len());
            for (&xf, &xt) in frequency.iter().zip(&temporal) {
                let a = self.attention.forward(tape, p, xf, xt)?;
                attention.push(a.weights);
                fused.push(a.features);
            }
            fused
        };

        let mut logits = Vec::with_capacity(fused.len());
        let mut embeddings = Vec::with_capacity(fused.len());
        for &f in &fused {
            embeddings.push(tape.mean_rows(f));
            logits.push(self.classifier.forward(tape, p, f)?);
        }
        let logits = if logits.len() == 1 { logits[0] } else { tape.concat_rows(&logits)? };
        Ok(Forward { logits, embeddings, temporal, frequency, fused, gates, layer_weights, attention, bn_stats })
    }

    /// Inference with running normalization statistics; one tape per utterance,
    /// so results do not depend on batch composition.
    pub fn infer(&self, samples: &[T], mask: &BreathMask) -> Result<Inference<T>> {
        let mut tape = Tape::new();
        let p = self.store.bind_frozen(&mut tape);
        let w = tape.constant(Tensor::matrix(1, samples.len(), samples.to_vec())?);
        let out = self.forward(&mut tape, &p, &[w], std::slice::from_ref(mask), false)?;
        let l = tape.value(out.logits);
        Ok(Inference { logits: [l.get(0, 0), l.get(0, 1)], embedding: tape.value(out.embeddings[0]).data().to_vec() })
    }

    pub fn wave_node(tape: &mut Tape<T>, samples: &[f64]) -> Result<Var> {
        Ok(tape.constant(Tensor::matrix(1, samples.len(), samples.iter().map(|&v| T::lit(v)).collect())?))
    }
}
