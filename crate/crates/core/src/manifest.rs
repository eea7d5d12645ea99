//! Run manifests: what was run, with which configuration, on which files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{IoContext, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

impl Artifact {
    /// Digests a file, or every file below a directory in path order.
    pub fn of(path: impl AsRef<Path>) -> Result<Vec<Self>> {
        let path = path.as_ref();
        if path.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(path)
                .at(path)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()
                .at(path)?;
            entries.sort();
            let mut out = Vec::new();
            for e in entries {
                out.extend(Self::of(e)?);
            }
            Ok(out)
        } else {
            Ok(vec![Self {
                path: path.to_path_buf(),
                sha256: sha256_file(path)?,
            }])
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    Ok(sha256_hex(&fs::read(path).at(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub tool_version: String,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, config: serde_json::Value, seeds: Vec<u64>) -> Self {
        Self {
            command: command.into(),
            config,
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    pub fn input(&mut self, path: impl AsRef<Path>) -> Result<&mut Self> {
        self.inputs.extend(Artifact::of(path)?);
        Ok(self)
    }

    pub fn output(&mut self, path: impl AsRef<Path>) -> Result<&mut Self> {
        self.outputs.extend(Artifact::of(path)?);
        Ok(self)
    }

    /// Re-digests every listed artifact and reports the first that changed.
    pub fn verify(&self) -> Result<Option<PathBuf>> {
        for a in self.inputs.iter().chain(&self.outputs) {
            if sha256_file(&a.path)? != a.sha256 {
                return Ok(Some(a.path.clone()));
            }
        }
        Ok(None)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").at(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(serde_json::from_str(&fs::read_to_string(path).at(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
