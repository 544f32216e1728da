//! Dataset handling, optimizers, the training loop, evaluation and checkpoints.

pub mod checkpoint;
pub mod dataset;
pub mod eval;
pub mod optim;
pub mod synth;
pub mod trainer;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointError};
pub use dataset::{load_dataset, save_dataset, SamplePair};
pub use eval::{evaluate, foreground_iou, Metrics};
pub use optim::{adam_step, sgd_step, AdamHyper, AdamMoments, OptimizerKind, OptimizerState};
pub use synth::generate_synthetic_dataset;
pub use trainer::{train, train_with, TrainConfig, TrainOutcome};

use crate::fcn::FcnError;
use crate::image::ImageError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample `{name}`: {reason}")]
    Sample { name: String, reason: String },
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("optimizer: {0}")]
    Optimizer(String),
    #[error(transparent)]
    Network(#[from] FcnError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}
