//! Run manifests written next to every output file.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    /// SHA-256 of the configuration bytes (config file or canonical arguments).
    pub config_sha256: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn start(command: &str, seed: Option<u64>, config: &[u8]) -> Self {
        let t = now();
        Self {
            tool: "pvsae".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config_sha256: sha256_hex(config),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix: t,
            finished_unix: t,
        }
    }

    /// `<output>.manifest.json`
    pub fn sidecar_path(output: &Path) -> PathBuf {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        output.with_file_name(name)
    }

    /// Stamp the finish time and write the sidecar of the first output.
    pub fn finish(mut self) -> Result<PathBuf> {
        self.finished_unix = now();
        let first = self
            .outputs
            .first()
            .ok_or_else(|| Error::InvalidInput("manifest has no outputs".into()))?;
        let path = Self::sidecar_path(Path::new(first));
        let json = serde_json::to_string_pretty(&self)
            .map_err(|e| Error::InvalidInput(format!("manifest serialisation: {e}")))?;
        std::fs::write(&path, json + "\n")?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Schema {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}
