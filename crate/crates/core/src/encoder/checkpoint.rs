//! JSON checkpoint container: encoder config, flat named parameter arrays, and
//! the metadata needed to run the model on raw text (mode, templates, vocab).
//! Floats are written in shortest round-trip form, so save/load is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::math::Matrix;
use super::params::{EncoderConfig, ModelParams};
use super::ModelError;
use crate::auxpair::{AuxMode, TemplateSet};

pub const CHECKPOINT_FORMAT: &str = "absa-pair-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model_name: String,
    pub mode: AuxMode,
    pub templates: TemplateSet,
    /// Packed sequence length used when encoding inputs.
    pub max_seq_len: usize,
    pub vocab: Vec<String>,
    /// Epochs completed when the checkpoint was written.
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct NamedArray {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Container {
    format: String,
    config: EncoderConfig,
    meta: CheckpointMeta,
    tensors: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let tensors = self
            .params
            .named_tensors()
            .into_iter()
            .map(|(name, m)| NamedArray {
                name,
                shape: [m.rows, m.cols],
                data: m.data.clone(),
            })
            .collect();
        let container = Container {
            format: CHECKPOINT_FORMAT.into(),
            config: self.params.config.clone(),
            meta: self.meta.clone(),
            tensors,
        };
        serde_json::to_string(&container).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let container: Container =
            serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if container.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!("unsupported format `{}`", container.format)));
        }
        container.config.validate()?;
        let mut params = ModelParams::zeros(&container.config);
        let names = params.tensor_names();
        if container.tensors.len() != names.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, found {}",
                names.len(),
                container.tensors.len()
            )));
        }
        for ((slot, name), array) in params.tensors_mut().into_iter().zip(&names).zip(container.tensors) {
            if &array.name != name {
                return Err(ModelError::Checkpoint(format!("expected tensor `{name}`, found `{}`", array.name)));
            }
            if array.shape != [slot.rows, slot.cols] || array.data.len() != slot.len() {
                return Err(ModelError::Checkpoint(format!("tensor `{name}` has the wrong shape")));
            }
            *slot = Matrix::from_vec(slot.rows, slot.cols, array.data);
        }
        if container.meta.vocab.len() != container.config.vocab_size {
            return Err(ModelError::Checkpoint("vocabulary size disagrees with embedding table".into()));
        }
        Ok(Checkpoint {
            params,
            meta: container.meta,
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), ModelError> {
    fs::write(path, checkpoint.to_json()).map_err(|source| ModelError::CheckpointIo {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let text = fs::read_to_string(path).map_err(|source| ModelError::CheckpointIo {
        path: path.to_path_buf(),
        source,
    })?;
    Checkpoint::from_json(&text)
}
