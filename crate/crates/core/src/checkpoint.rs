//! Self-describing JSON checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::optim::Param;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

/// How the evaluation split was drawn from the target dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelConfig,
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub split: Option<SplitInfo>,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, encoder: EncoderConfig, split: Option<SplitInfo>) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            model: model.config.clone(),
            encoder,
            split,
            params: model
                .params()
                .into_iter()
                .map(|p| ParamRecord {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    data: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Rebuilds the model, checking every parameter name and shape against
    /// the stored configuration.
    pub fn to_model(&self) -> Result<Model> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint format {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let mut model = Model::new(self.model.clone(), 0)?;
        let mut slots = model.params_mut();
        if slots.len() != self.params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, configuration needs {}",
                self.params.len(),
                slots.len()
            )));
        }
        for (slot, rec) in slots.iter_mut().zip(&self.params) {
            if slot.name != rec.name || slot.value.shape() != rec.shape.as_slice() {
                return Err(Error::Config(format!(
                    "checkpoint tensor {} {:?} does not match {} {:?}",
                    rec.name,
                    rec.shape,
                    slot.name,
                    slot.value.shape()
                )));
            }
            **slot = Param::new(rec.name.clone(), Tensor::new(rec.shape.clone(), rec.data.clone())?);
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Hex SHA-256 over the raw bytes of a parameter set.
pub fn param_hash<'a>(params: impl IntoIterator<Item = &'a Param>) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.name.as_bytes());
        for v in p.value.data() {
            h.update(v.to_le_bytes());
        }
    }
    format!("{:x}", h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let model = Model::new(ModelConfig::default(), 11).unwrap();
        let ck = Checkpoint::from_model(&model, EncoderConfig::default(), None);
        let back: Checkpoint = serde_json::from_slice(&ck.to_bytes().unwrap()).unwrap();
        let restored = back.to_model().unwrap();
        assert_eq!(param_hash(restored.params()), param_hash(model.params()));
    }

    #[test]
    fn rejects_shape_mismatch() {
        let model = Model::new(ModelConfig::default(), 1).unwrap();
        let mut ck = Checkpoint::from_model(&model, EncoderConfig::default(), None);
        ck.model.num_classes = 5;
        assert!(ck.to_model().is_err());
    }

    #[test]
    fn rejects_unknown_version() {
        let model = Model::new(ModelConfig::default(), 1).unwrap();
        let mut ck = Checkpoint::from_model(&model, EncoderConfig::default(), None);
        ck.format_version = 99;
        assert!(ck.to_model().is_err());
    }
}
