//! Stage manifests: what a stage read, what it wrote, and with which settings.
//!
//! Every output directory carries a `manifest.json`. A downstream stage
//! refuses an input file whose checksum does not match its manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOOL_VERSION: &str = concat!("revcorpus ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("no manifest in {0}")]
    Missing(String),
    #[error("manifest {path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error("manifest in {dir} does not list {file}")]
    NotListed { dir: String, file: String },
    #[error("checksum mismatch for {file}: manifest has {expected}, file has {actual}")]
    ChecksumMismatch {
        file: String,
        expected: String,
        actual: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub sha256: String,
    pub bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<u64>,
}

impl FileDigest {
    pub fn of(bytes: &[u8], records: Option<u64>) -> Self {
        Self {
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
            records,
        }
    }

    pub fn of_file(path: &Path, records: Option<u64>) -> std::io::Result<Self> {
        Ok(Self::of(&fs::read(path)?, records))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Input name → digest of the bytes consumed.
    #[serde(default)]
    pub inputs: BTreeMap<String, FileDigest>,
    /// Output file name (relative to the manifest's directory) → digest.
    #[serde(default)]
    pub outputs: BTreeMap<String, FileDigest>,
    /// Stage parameters, e.g. the oversampling plan.
    #[serde(default)]
    pub params: serde_json::Value,
    /// Effective pipeline configuration.
    #[serde(default)]
    pub config: serde_json::Value,
    #[serde(default)]
    pub config_hash: String,
}

impl Manifest {
    pub fn new(stage: &str) -> Self {
        Self {
            stage: stage.to_owned(),
            tool_version: TOOL_VERSION.to_owned(),
            seed: None,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            params: serde_json::Value::Null,
            config: serde_json::Value::Null,
            config_hash: String::new(),
        }
    }

    pub fn with_config(mut self, config: serde_json::Value) -> Self {
        self.config_hash = sha256_hex(config.to_string().as_bytes());
        self.config = config;
        self
    }

    pub fn records(&self, file: &str) -> Option<u64> {
        self.outputs.get(file).and_then(|d| d.records)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, dir: &Path) -> Result<(), ManifestError> {
        fs::write(dir.join(MANIFEST_FILE), self.to_json())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ManifestError> {
        let path = dir.join(MANIFEST_FILE);
        let raw = match fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(ManifestError::Missing(dir.display().to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        serde_json::from_str(&raw).map_err(|e| ManifestError::Malformed {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    /// Reads `dir/file` and checks it against this manifest's recorded digest.
    pub fn read_verified(&self, dir: &Path, file: &str) -> Result<Vec<u8>, ManifestError> {
        let expected = self.outputs.get(file).ok_or_else(|| ManifestError::NotListed {
            dir: dir.display().to_string(),
            file: file.to_owned(),
        })?;
        let bytes = fs::read(dir.join(file))?;
        let actual = sha256_hex(&bytes);
        if actual != expected.sha256 {
            return Err(ManifestError::ChecksumMismatch {
                file: dir.join(file).display().to_string(),
                expected: expected.sha256.clone(),
                actual,
            });
        }
        Ok(bytes)
    }
}

/// Loads the manifest in `dir` and returns the verified bytes of `file`.
pub fn read_stage_input(dir: &Path, file: &str) -> Result<(Manifest, Vec<u8>), ManifestError> {
    let manifest = Manifest::load(dir)?;
    let bytes = manifest.read_verified(dir, file)?;
    Ok((manifest, bytes))
}
