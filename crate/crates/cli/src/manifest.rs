//! Run manifests: every command that writes artifacts records what produced
//! them (command line, config hash, seeds, inputs/outputs, timestamps).

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use crate::CliResult;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub created_at: String,
    pub artifact_version: String,
}

/// Hex SHA-256 of a canonical config serialization.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new<T: Serialize>(command: &str, config: &T, seeds: Vec<u64>) -> Self {
        Self {
            command: command.to_string(),
            config_hash: config_hash(config),
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
            created_at: chrono::Utc::now().to_rfc3339(),
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(self)? + "\n",
        )?;
        Ok(())
    }
}
