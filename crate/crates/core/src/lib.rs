//! Breath-cue-gated audio deepfake detection.
//!
//! The crate is organized as the detection pipeline itself:
//!
//! * [`diff`]: dense kernels with reverse-mode gradients and a gradient checker.
//! * [`breathmask`]: breath annotations to frame masks, duration normalization.
//! * [`temporal`]: layered toy encoder, layer-weighted aggregation, breath gating.
//! * [`freq`]: learnable sinc filterbank branch.
//! * [`fusion`]: multi-head cross-attention (frequency queries, temporal keys/values).
//! * [`losses`]: positive-only contrastive, center and contrast losses, weighted CE.
//! * [`classifier`]: stacked BiLSTM with mean pooling and a two-way head.
//! * [`metrics`]: EER, minDCF, CLLR and per-condition breakdowns.
//! * [`synth`]: deterministic synthetic corpus and waveform augmentation.
//! * [`harness`]: configuration, training, evaluation, ablation, export.
//! * [`fixtures`]: golden cases checked against the library.
//!
//! Numeric code is generic over [`Scalar`] (`f32` and `f64`); the aliases
//! below name the two instantiations used in practice.

pub mod breathmask;
pub mod classifier;
pub mod diff;
pub mod dsp;
pub mod error;
pub mod fixtures;
pub mod freq;
pub mod fusion;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod params;
pub mod scalar;
pub mod synth;
pub mod temporal;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = diff::Tensor<f32>;
pub type Tensor64 = diff::Tensor<f64>;
pub type Tape32 = diff::Tape<f32>;
pub type Tape64 = diff::Tape<f64>;
pub type BreathNet32 = model::BreathNet<f32>;
pub type BreathNet64 = model::BreathNet<f64>;
