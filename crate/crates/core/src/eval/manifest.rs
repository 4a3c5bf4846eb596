use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EvalError;

pub const MANIFEST_FORMAT: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String, EvalError> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Provenance of one command: what ran, with which seeds and configuration,
/// over which inputs, producing which outputs. Paths are relative to the
/// output directory; no timestamps, so identical runs give identical files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seeds: BTreeMap<String, u64>,
    pub config_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, config_text: &str) -> Self {
        Self {
            format: MANIFEST_FORMAT,
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seeds: BTreeMap::new(),
            config_sha256: sha256_hex(config_text.as_bytes()),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) -> &mut Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn input(&mut self, root: &Path, rel: &str) -> Result<&mut Self, EvalError> {
        self.inputs
            .insert(rel.to_string(), hash_file(&root.join(rel))?);
        Ok(self)
    }

    pub fn output(&mut self, root: &Path, rel: &str) -> Result<&mut Self, EvalError> {
        self.outputs
            .insert(rel.to_string(), hash_file(&root.join(rel))?);
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn write(&self, path: &Path) -> Result<(), EvalError> {
        fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, EvalError> {
        serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| EvalError::Format(e.to_string()))
    }

    /// Outputs whose current content no longer matches the recorded hash.
    pub fn stale_outputs(&self, root: &Path) -> Vec<String> {
        self.outputs
            .iter()
            .filter(|(rel, hash)| hash_file(&root.join(rel)).ok().as_ref() != Some(*hash))
            .map(|(rel, _)| rel.clone())
            .collect()
    }
}
