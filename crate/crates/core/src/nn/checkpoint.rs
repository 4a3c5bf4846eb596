//! Parameter checkpoint container.
//!
//! A checkpoint is a JSON document:
//!
//! ```json
//! {
//!   "format": "pnc-checkpoint",
//!   "version": 1,
//!   "metadata": { "<key>": <any JSON value> },
//!   "tensors": [ { "name": "encoder.0.weight", "shape": [8, 1, 3, 3], "data": [ ... ] } ]
//! }
//! ```
//!
//! Layer architectures are stored in `metadata` under `<prefix>.layers` as a
//! list of layer specs; tensors are named `<prefix>.<layer>.weight` and
//! `<prefix>.<layer>.bias`. Values are written with shortest round-trip float
//! formatting, so a save/load cycle is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layer, LayerSpec, NnError, Sequential, Tensor};

pub const CHECKPOINT_FORMAT: &str = "pnc-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
    pub tensors: Vec<NamedTensor>,
}

impl Default for Checkpoint {
    fn default() -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            metadata: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_tensor(&mut self, name: impl Into<String>, tensor: &Tensor) {
        self.tensors.push(NamedTensor {
            name: name.into(),
            shape: tensor.shape().to_vec(),
            data: tensor.data().to_vec(),
        });
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor, NnError> {
        let t = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| NnError::Checkpoint(format!("missing tensor {name}")))?;
        Tensor::from_vec(&t.shape, t.data.clone())
    }

    pub fn insert_sequential(&mut self, prefix: &str, net: &Sequential) {
        let specs = serde_json::to_value(net.specs()).expect("layer specs serialize");
        self.metadata.insert(format!("{prefix}.layers"), specs);
        for (i, layer) in net.layers().iter().enumerate() {
            self.insert_tensor(format!("{prefix}.{i}.weight"), &layer.weight);
            if let Some(b) = &layer.bias {
                self.insert_tensor(format!("{prefix}.{i}.bias"), b);
            }
        }
    }

    pub fn sequential(&self, prefix: &str) -> Result<Sequential, NnError> {
        let key = format!("{prefix}.layers");
        let specs: Vec<LayerSpec> = self
            .metadata
            .get(&key)
            .cloned()
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| NnError::Checkpoint(format!("{key}: {e}")))?
            .ok_or_else(|| NnError::Checkpoint(format!("missing {key}")))?;
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.into_iter().enumerate() {
            spec.validate()?;
            let weight = self.tensor(&format!("{prefix}.{i}.weight"))?;
            let bias_name = format!("{prefix}.{i}.bias");
            let bias = if self.tensors.iter().any(|t| t.name == bias_name) {
                Some(self.tensor(&bias_name)?)
            } else {
                None
            };
            layers.push(Layer { spec, weight, bias });
        }
        Ok(Sequential::from_layers(layers))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let ckpt: Checkpoint =
            serde_json::from_str(text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(NnError::Checkpoint(format!(
                "unknown format {:?}",
                ckpt.format
            )));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        std::fs::write(path, self.to_json()).map_err(|e| NnError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let text = std::fs::read_to_string(path).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        Self::from_json(&text)
    }
}
