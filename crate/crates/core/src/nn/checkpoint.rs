//! JSON checkpoints: explicit shapes and row-major flattened values.
//!
//! Floats are written in shortest round-trip form (at most 17 significant
//! digits) and parsed with correct rounding, so a save/load cycle is
//! bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::conv::Conv1d;
use super::dense::Dense;
use super::lstm::{BiLstm, Lstm};
use super::model::{ModelConfig, ModelParams, RecurrentHead};
use super::tensor::{Parameters, Tensor};
use crate::error::{Error, Result};
use crate::preprocess::PreprocessConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelConfig,
    pub preprocess: PreprocessConfig,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model(model: &ModelParams, preprocess: &PreprocessConfig) -> Self {
        let tensors = model
            .tensors()
            .into_iter()
            .map(|(name, t)| NamedTensor {
                name: name.to_string(),
                shape: t.shape.clone(),
                data: t.data.clone(),
            })
            .collect();
        Checkpoint {
            format_version: FORMAT_VERSION,
            model: model.config,
            preprocess: *preprocess,
            tensors,
        }
    }

    /// Rebuild the model, checking every tensor's name and shape.
    pub fn to_model(&self) -> Result<ModelParams> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint format version {}",
                self.format_version
            )));
        }
        let cfg = self.model;
        cfg.validate()?;
        if cfg.input_len != self.preprocess.length {
            return Err(Error::Config(format!(
                "model input length {} disagrees with preprocessing length {}",
                cfg.input_len, self.preprocess.length
            )));
        }
        let (h, d) = (cfg.hidden, cfg.num_filters);
        let lstm = || Lstm {
            w_input: Tensor::zeros(&[4 * h, d]),
            w_recurrent: Tensor::zeros(&[4 * h, h]),
            bias: Tensor::zeros(&[4 * h]),
        };
        let mut model = ModelParams {
            config: cfg,
            conv: Conv1d {
                filters: Tensor::zeros(&[d, cfg.kernel_len]),
                bias: Tensor::zeros(&[d]),
                stride: cfg.stride,
                activation: cfg.activation,
            },
            head: RecurrentHead {
                bilstm: BiLstm { forward: lstm(), backward: lstm(), readout: cfg.readout },
                dense: Dense {
                    weights: Tensor::zeros(&[cfg.num_classes, 2 * h]),
                    bias: Tensor::zeros(&[cfg.num_classes]),
                },
            },
        };
        let slots = model.tensors_mut();
        if slots.len() != self.tensors.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, model needs {}",
                self.tensors.len(),
                slots.len()
            )));
        }
        for ((name, slot), stored) in slots.into_iter().zip(&self.tensors) {
            if stored.name != name || stored.shape != slot.shape {
                return Err(Error::Config(format!(
                    "tensor {} {:?} does not match expected {name} {:?}",
                    stored.name, stored.shape, slot.shape
                )));
            }
            *slot = Tensor::from_vec(&stored.shape, stored.data.clone())?;
        }
        if !model.all_finite() {
            return Err(Error::Data("checkpoint contains non-finite weights".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&s)?)
    }
}
