//! Small convolutional classifier with a GAP → dense(512) → dropout → sigmoid
//! head, trained from scratch with binary cross-entropy and Adam.

use std::path::PathBuf;

mod adam;
mod checkpoint;
mod config;
mod model;
mod train;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{ConvSpec, ModelConfig, TrainingConfig, DEFAULT_DROPOUT, DEFAULT_HIDDEN_UNITS, DEFAULT_STEM};
pub use model::{bce_loss, parameter_count, parameter_layout, InputNorm, Mode, ParamGroup, TrainedModel, BCE_EPS};
pub use train::{
    load_examples, predict_examples, predict_scores, train, train_on_examples, validation_split, EarlyStopping,
    EpochStats, Examples, StopDecision,
};

use crate::codec::CodecError;
use crate::dataset::Split;

#[derive(thiserror::Error, Debug)]
pub enum NnError {
    #[error("input shape {got:?} does not match model input {expected:?} (width, height, channels)")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("the {0:?} split is empty")]
    EmptySplit(Split),

    #[error("invalid model or training configuration: {0}")]
    InvalidConfig(String),

    #[error("cannot read {path}: {source}")]
    MissingFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Codec(#[from] CodecError),
}
