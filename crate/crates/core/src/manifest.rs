//! Run manifests: what a command was asked to do, on which inputs, and
//! what it produced. Manifests carry no timestamps so that two identical
//! runs write byte-identical files.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::io_util::{sha256_file, write_atomic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    /// Absent for artifacts that embed wall-clock measurements.
    pub sha256: Option<String>,
}

impl Artifact {
    pub fn hashed(path: &Path) -> io::Result<Self> {
        Ok(Artifact {
            path: path.display().to_string(),
            sha256: Some(sha256_file(path)?),
        })
    }

    pub fn unhashed(path: &Path) -> Self {
        Artifact {
            path: path.display().to_string(),
            sha256: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub seed: u64,
    /// Fully resolved settings; enough to repeat the run.
    pub settings: serde_json::Value,
    pub inputs: BTreeMap<String, Artifact>,
    pub outputs: BTreeMap<String, Artifact>,
    pub results: serde_json::Value,
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: u64, settings: serde_json::Value) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            subcommand: subcommand.to_owned(),
            seed,
            settings,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            results: serde_json::Value::Null,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}
