//! Model checkpoint container.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "FKMODEL\0"
//! 8       4     format version, u32 little-endian (currently 1)
//! 12      4     header length N, u32 little-endian
//! 16      N     header, UTF-8 JSON:
//!               {"config":{…},"layout":[{"name","shape","offset"},…],
//!                "epochs_run":…,"best_val_loss":…|null,
//!                "preprocess":{…}|null,"input_norm":{"mean":[…],"std":[…]},
//!                "param_count":…}
//! 16+N    8·P   parameters, f64 little-endian, P = param_count
//! ```
//!
//! Nothing follows the parameters. Reals in the header use 17 significant
//! digits, so save → load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::{parameter_layout, InputNorm, ParamGroup, TrainedModel};
use super::NnError;
use crate::codec::PreprocessConfig;
use crate::util::{atomic_write, to_json_bytes};

pub const MAGIC: &[u8; 8] = b"FKMODEL\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    layout: Vec<ParamGroup>,
    epochs_run: usize,
    best_val_loss: Option<f64>,
    #[serde(default)]
    preprocess: Option<PreprocessConfig>,
    input_norm: InputNorm,
    param_count: usize,
}

fn corrupt(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

pub fn encode_checkpoint(model: &TrainedModel) -> Vec<u8> {
    let header = Header {
        config: model.config.clone(),
        layout: parameter_layout(&model.config),
        epochs_run: model.epochs_run,
        best_val_loss: model.best_val_loss.is_finite().then_some(model.best_val_loss),
        preprocess: model.preprocess.clone(),
        input_norm: model.input_norm.clone(),
        param_count: model.parameters.len(),
    };
    let mut json = to_json_bytes(&header).expect("header serialization");
    json.pop(); // trailing newline
    let mut out = Vec::with_capacity(16 + json.len() + 8 * model.parameters.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in &model.parameters {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainedModel, NnError> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a model checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported checkpoint version {version}")));
    }
    let header_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() < header_len {
        return Err(corrupt("truncated header"));
    }
    let header: Header =
        serde_json::from_slice(&body[..header_len]).map_err(|e| corrupt(format!("bad header: {e}")))?;
    header.config.validate()?;
    if header.layout != parameter_layout(&header.config) {
        return Err(corrupt("layout does not match config"));
    }
    let raw = &body[header_len..];
    if raw.len() != header.param_count * 8 {
        return Err(corrupt(format!(
            "expected {} parameter bytes, found {}",
            header.param_count * 8,
            raw.len()
        )));
    }
    let parameters = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut model = TrainedModel::from_parameters(header.config, parameters)?;
    model.epochs_run = header.epochs_run;
    model.best_val_loss = header.best_val_loss.unwrap_or(f64::INFINITY);
    model.preprocess = header.preprocess;
    header.input_norm.validate(model.config.input_channels)?;
    model.input_norm = header.input_norm;
    Ok(model)
}

pub fn save_checkpoint(model: &TrainedModel, path: &Path) -> Result<(), NnError> {
    atomic_write(path, &encode_checkpoint(model)).map_err(|source| NnError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedModel, NnError> {
    let bytes = std::fs::read(path).map_err(|source| NnError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes)
}
