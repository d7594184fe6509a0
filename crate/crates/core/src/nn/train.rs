//! Epoch loop with seeded shuffling, Adam and validation-loss early stopping,
//! plus batch inference over manifest records.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::{adam_step, AdamState};
use super::config::{ModelConfig, TrainingConfig};
use super::model::{bce_loss, InputNorm, Mode, TrainedModel};
use super::NnError;
use crate::calibration::ScoredSample;
use crate::codec::{self, InputTensor, PreprocessConfig};
use crate::dataset::{Label, Manifest, SampleRecord, Split};
use crate::util::mix_seed;

/// Inference batch size; has no effect on the results.
const EVAL_BATCH: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub improved: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Tracks the best validation loss; asks to stop after `patience`
/// consecutive epochs without a strict improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.wait = 0;
            StopDecision::Improved
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

/// Labeled, preprocessed examples.
#[derive(Clone, Debug, Default)]
pub struct Examples {
    pub inputs: Vec<InputTensor>,
    pub labels: Vec<Label>,
}

impl Examples {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

fn eval_probs(model: &TrainedModel, inputs: &[InputTensor]) -> Result<Vec<f64>, NnError> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(EVAL_BATCH) {
        out.extend(model.forward(chunk, Mode::Eval)?);
    }
    Ok(out)
}

/// Trains from freshly initialized weights and returns the snapshot with the
/// lowest validation loss.
///
/// Input standardization is fitted on `train` before the first step.
///
/// Seeds: weights from `mix(seed, 0)`; the shuffle order and every batch's
/// dropout seed come from one stream seeded with `mix(seed, 1)`.
pub fn train_on_examples(
    train: &Examples,
    val: &Examples,
    mcfg: &ModelConfig,
    tcfg: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainedModel, NnError> {
    tcfg.validate()?;
    if train.is_empty() {
        return Err(NnError::EmptySplit(Split::Train));
    }
    if val.is_empty() {
        return Err(NnError::EmptySplit(Split::Val));
    }
    let mut model = TrainedModel::init(mcfg.clone(), mix_seed(tcfg.seed, 0))?;
    model.input_norm = InputNorm::fit(&train.inputs)?;
    let mut stream = ChaCha8Rng::seed_from_u64(mix_seed(tcfg.seed, 1));
    let mut adam = AdamState::new(model.parameters.len());
    let mut stopper = EarlyStopping::new(tcfg.patience);
    let mut best_params = model.parameters.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0u64;
    let mut epochs_run = 0;

    for epoch in 1..=tcfg.max_epochs {
        order.shuffle(&mut stream);
        let mut loss_sum = 0.0;
        for idx in order.chunks(tcfg.batch_size) {
            let batch: Vec<InputTensor> = idx.iter().map(|&i| train.inputs[i].clone()).collect();
            let labels: Vec<Label> = idx.iter().map(|&i| train.labels[i]).collect();
            let mode = Mode::Train {
                seed: stream.next_u64(),
            };
            let (loss, grad) = model.backward(&batch, &labels, mode)?;
            loss_sum += loss * idx.len() as f64;
            step += 1;
            adam_step(&mut model.parameters, &grad, &mut adam, step, tcfg)?;
        }
        let val_loss = bce_loss(&eval_probs(&model, &val.inputs)?, &val.labels)?;
        let decision = stopper.observe(val_loss);
        epochs_run = epoch;
        if decision == StopDecision::Improved {
            best_params.clone_from(&model.parameters);
        }
        on_epoch(&EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            improved: decision == StopDecision::Improved,
        });
        if decision == StopDecision::Stop {
            break;
        }
    }

    model.parameters = best_params;
    model.epochs_run = epochs_run;
    model.best_val_loss = stopper.best();
    Ok(model)
}

/// Reads and preprocesses records in parallel; output order follows `records`.
pub fn load_examples(
    records: &[SampleRecord],
    root: &Path,
    preprocess: &PreprocessConfig,
) -> Result<Examples, NnError> {
    preprocess.validate()?;
    let inputs = records
        .par_iter()
        .map(|r| {
            let path = root.join(&r.id);
            let bytes = std::fs::read(&path).map_err(|source| NnError::MissingFile { path, source })?;
            Ok(codec::preprocess_bytes(&bytes, preprocess)?)
        })
        .collect::<Result<Vec<_>, NnError>>()?;
    Ok(Examples {
        inputs,
        labels: records.iter().map(|r| r.label).collect(),
    })
}

/// Which records play the validation role: the Val split when present,
/// otherwise the Test split (the 80:20 replication protocol).
pub fn validation_split(manifest: &Manifest) -> Split {
    if manifest.in_split(Split::Val).next().is_some() {
        Split::Val
    } else {
        Split::Test
    }
}

/// Trains on the manifest's Train split, monitoring [`validation_split`].
pub fn train(
    manifest: &Manifest,
    root: &Path,
    preprocess: &PreprocessConfig,
    mcfg: &ModelConfig,
    tcfg: &TrainingConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainedModel, NnError> {
    mcfg.validate()?;
    tcfg.validate()?;
    check_compatible(mcfg, preprocess)?;
    let train_records: Vec<SampleRecord> = manifest.in_split(Split::Train).cloned().collect();
    if train_records.is_empty() {
        return Err(NnError::EmptySplit(Split::Train));
    }
    let val_split = validation_split(manifest);
    let val_records: Vec<SampleRecord> = manifest.in_split(val_split).cloned().collect();
    if val_records.is_empty() {
        return Err(NnError::EmptySplit(val_split));
    }
    if val_split == Split::Test {
        log::warn!("no validation split in manifest; monitoring early stopping on the test split");
    }
    let train_set = load_examples(&train_records, root, preprocess)?;
    let val_set = load_examples(&val_records, root, preprocess)?;
    let mut model = train_on_examples(&train_set, &val_set, mcfg, tcfg, on_epoch)?;
    model.preprocess = Some(preprocess.clone());
    Ok(model)
}

fn check_compatible(mcfg: &ModelConfig, preprocess: &PreprocessConfig) -> Result<(), NnError> {
    let produced = (
        preprocess.target_width,
        preprocess.target_height,
        preprocess.input_mode.channels(),
    );
    let expected = (mcfg.input_size, mcfg.input_size, mcfg.input_channels);
    if produced != expected {
        return Err(NnError::ShapeMismatch {
            expected,
            got: produced,
        });
    }
    Ok(())
}

/// Eval-mode probabilities for `records`, returned in canonical id order.
pub fn predict_scores(
    model: &TrainedModel,
    records: &[SampleRecord],
    root: &Path,
    preprocess: &PreprocessConfig,
) -> Result<Vec<ScoredSample>, NnError> {
    check_compatible(&model.config, preprocess)?;
    let examples = load_examples(records, root, preprocess)?;
    let probs = eval_probs(model, &examples.inputs)?;
    let mut out: Vec<ScoredSample> = records
        .iter()
        .zip(probs)
        .map(|(r, p)| ScoredSample {
            id: r.id.clone(),
            label: r.label,
            score: p,
        })
        .collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

/// Eval-mode probabilities for already preprocessed inputs, in input order.
pub fn predict_examples(model: &TrainedModel, inputs: &[InputTensor]) -> Result<Vec<f64>, NnError> {
    eval_probs(model, inputs)
}
