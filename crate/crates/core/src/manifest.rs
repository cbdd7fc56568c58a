//! Run manifests: one JSON file per executed stage recording geometry,
//! configuration, seeds, file digests, metrics, and the digests of the
//! manifests of the stages that produced its inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::geometry::FanBeamGeometry;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Path relative to the run directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParentRecord {
    pub stage: String,
    pub manifest: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub tool_version: String,
    pub preset: String,
    pub seed: u64,
    pub geometry: FanBeamGeometry,
    pub geometry_fingerprint: String,
    pub config: serde_json::Value,
    pub parents: Vec<ParentRecord>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub metrics: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(stage: &str, preset: &str, seed: u64, geometry: &FanBeamGeometry, config: serde_json::Value) -> Self {
        Self {
            stage: stage.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            preset: preset.to_string(),
            seed,
            geometry: geometry.clone(),
            geometry_fingerprint: geometry.fingerprint(),
            config,
            parents: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            metrics: BTreeMap::new(),
        }
    }

    /// Writes the manifest and returns the digest of the written bytes.
    pub fn save(&self, path: &Path) -> Result<String> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, &text)?;
        Ok(sha256_hex(text.as_bytes()))
    }

    /// Reads a manifest and the digest of its bytes.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = fs::read(path)?;
        Ok((serde_json::from_slice(&bytes)?, sha256_hex(&bytes)))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}
