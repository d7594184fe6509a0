#![doc = include_str!("../README.md")]

pub mod calibration;
pub mod cli;
pub mod codec;
pub mod dataset;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod util;

pub use calibration::{ScoredSample, ThresholdCalibration};
pub use codec::{DiffTensor, ImageTensor, InputMode, InputTensor, PreprocessConfig};
pub use dataset::{Label, Manifest, SampleRecord, Split};
pub use metrics::{Averaging, ConfusionMatrix, MetricsRow, RocCurve};
pub use nn::{ModelConfig, TrainedModel, TrainingConfig};
pub use report::{ComparisonTable, EvaluationReport};
