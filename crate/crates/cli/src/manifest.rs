use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

/// Written next to the outputs of every run.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<InputRecord>,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub outputs: Vec<PathBuf>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(command: &str, config_json: &str, seed: u64) -> Self {
        Self {
            command: command.to_owned(),
            inputs: Vec::new(),
            config_hash: sha256_hex(config_json.as_bytes()),
            seed,
            version: env!("CARGO_PKG_VERSION").to_owned(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(InputRecord {
            path: path.to_owned(),
            sha256: sha256_hex(bytes),
        });
    }

    pub fn file_name(&self) -> String {
        format!("{}.manifest.json", self.command)
    }
}
