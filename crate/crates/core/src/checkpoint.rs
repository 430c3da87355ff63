//! Bit-exact model persistence.
//!
//! A checkpoint is a small JSON container: layer dimensions, the seed the
//! model was initialized from, and the raw parameter values as base64-encoded
//! little-endian `f64` bytes. Save/load round trips reproduce every bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codebook::{decode_f64s, encode_f64s};
use crate::error::{Error, Result};
use crate::nn::MlpModel;

const CHECKPOINT_FORMAT: &str = "forgetlab-checkpoint-v1";

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    layer_dims: Vec<usize>,
    seed: u64,
    values_b64: String,
}

pub fn save_model(model: &MlpModel, path: &Path) -> Result<()> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        layer_dims: model.layer_dims().to_vec(),
        seed: model.init_seed(),
        values_b64: encode_f64s(model.params().values()),
    };
    std::fs::write(path, serde_json::to_vec_pretty(&file)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    let file: CheckpointFile = serde_json::from_slice(&std::fs::read(path)?)?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Format(format!(
            "unknown checkpoint format {:?}",
            file.format
        )));
    }
    let values = decode_f64s(&file.values_b64)?;
    MlpModel::from_raw(&file.layer_dims, values, file.seed)
}
