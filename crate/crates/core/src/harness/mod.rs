//! Configuration, optimization, checkpoints, training, evaluation and
//! ablation orchestration.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod eval;
pub mod optim;
pub mod train;

pub use checkpoint::{average_checkpoints, Checkpoint};
pub use config::{Precision, RunConfig};
pub use data::{Dataset, MaskSource};
pub use eval::{ablate, evaluate, export_embeddings, render_ablation, AblationRow, EvalOutcome, Variant};
pub use optim::{AdamW, AdamWConfig};
pub use train::{should_stop, train, EpochLog, StepLosses, TrainOutcome, Trainer};
