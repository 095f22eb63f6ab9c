//! Provenance sidecars: every artifact `x` gets `x.manifest.json` holding
//! the command line, the resolved configuration, SHA-256 digests of inputs
//! and outputs, the seed and the tool version. `omniret replay` re-runs the
//! recorded command line.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::write_atomic;
use crate::error::{AppError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name, enough to reproduce the run.
    pub argv: Vec<String>,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub created_unix_s: u64,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

pub fn digest(path: &Path) -> Result<FileDigest> {
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
    })
}

pub fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>, config: BTreeMap<String, String>, seed: u64) -> Self {
        Self {
            tool: "omniret".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            argv,
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            created_unix_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn add_inputs<'a>(&mut self, paths: impl IntoIterator<Item = &'a Path>) -> Result<()> {
        for p in paths {
            self.inputs.push(digest(p)?);
        }
        Ok(())
    }

    /// Digests each artifact and writes this manifest beside every one of them.
    pub fn write_for(&mut self, artifacts: &[&Path]) -> Result<()> {
        self.outputs = artifacts.iter().map(|p| digest(p)).collect::<Result<_>>()?;
        let json = serde_json::to_vec_pretty(self).map_err(|e| AppError::Internal(e.to_string()))?;
        for a in artifacts {
            write_atomic(&sidecar_path(a), &json)?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| AppError::format(path, e.to_string()))
    }
}
