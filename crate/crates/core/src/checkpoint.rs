//! JSON model checkpoints. Parameter values are stored as base64 of their
//! little-endian f64 bytes so that a save/load round trip is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{CsvSchema, Normalizer};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, PeGnnModel};
use crate::training::TrainConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub values: String,
}

impl StoredTensor {
    fn encode(t: &Tensor) -> Self {
        let bytes: Vec<u8> = t.values().iter().flat_map(|v| v.to_le_bytes()).collect();
        StoredTensor {
            shape: t.shape().to_vec(),
            values: STANDARD.encode(bytes),
        }
    }

    fn decode(&self, name: &str) -> Result<Vec<f64>> {
        let bytes = STANDARD
            .decode(&self.values)
            .map_err(|e| Error::Checkpoint(format!("parameter '{name}': {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Checkpoint(format!(
                "parameter '{name}': {} bytes is not a whole number of f64 values",
                bytes.len()
            )));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}

/// Everything needed to rebuild a trained model and feed it new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub schema: Option<CsvSchema>,
    #[serde(default)]
    pub normalizer: Option<Normalizer>,
    pub params: BTreeMap<String, StoredTensor>,
}

impl Checkpoint {
    pub fn from_model(model: &PeGnnModel) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            model: model.config.clone(),
            train: None,
            schema: None,
            normalizer: None,
            params: model
                .params
                .iter()
                .map(|(_, name, t)| (name.to_string(), StoredTensor::encode(t)))
                .collect(),
        }
    }

    /// Rebuilds the model, requiring exactly the parameter names and shapes
    /// the stored configuration produces.
    pub fn to_model(&self) -> Result<PeGnnModel> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let mut model = PeGnnModel::new(self.model.clone(), 0)?;
        if let Some(extra) = self.params.keys().find(|k| model.params.id_of(k).is_none()) {
            return Err(Error::Checkpoint(format!("unexpected parameter '{extra}'")));
        }
        let ids: Vec<_> = model.params.iter().map(|(id, name, _)| (id, name.to_string())).collect();
        for (id, name) in ids {
            let stored = self
                .params
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter '{name}'")))?;
            let target = model.params.get_mut(id);
            if stored.shape != target.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    stored.shape,
                    target.shape()
                )));
            }
            let values = stored.decode(&name)?;
            if values.len() != target.numel() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{name}' holds {} values, expected {}",
                    values.len(),
                    target.numel()
                )));
            }
            target.values_mut().copy_from_slice(&values);
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Load(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
