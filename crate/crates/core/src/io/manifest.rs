//! Per-stage manifests: parameters, seed and content hashes of inputs and
//! outputs, enough to re-run the stage and detect stale inputs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{hash_file, read_json, sha256_hex, write_json};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub version: String,
    pub seed: u64,
    pub params: serde_json::Value,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// SHA-256 of the compact JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("config serializes"))
}

impl StageManifest {
    pub fn new<T: Serialize>(stage: &str, seed: u64, params: &T) -> Self {
        let params = serde_json::to_value(params).expect("params serialize");
        Self {
            stage: stage.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_hash: config_hash(&params),
            params,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        self.inputs.insert(path.display().to_string(), hash_file(path)?);
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> Result<&mut Self> {
        self.outputs.insert(path.display().to_string(), hash_file(path)?);
        Ok(self)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Re-hashes the recorded inputs.
    pub fn verify_inputs(&self) -> Result<()> {
        for (path, hash) in &self.inputs {
            let now = hash_file(Path::new(path))?;
            if &now != hash {
                return Err(Error::ManifestMismatch(format!("{path} changed since the {} stage ran", self.stage)));
            }
        }
        Ok(())
    }
}
