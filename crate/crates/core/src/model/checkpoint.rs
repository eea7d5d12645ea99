//! Checkpoint container:
//!
//! ```text
//! "BLM1" | u64 LE header length | JSON header | f32 LE tensor data
//! ```
//!
//! The header holds the [`ModelConfig`] and a manifest of `(name, shape,
//! offset)` entries; offsets count bytes from the start of the data section
//! and tensors appear in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams, Scalar};
use crate::error::{Error, IoContext, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BLM1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
}

impl Checkpoint {
    pub fn new<T: Scalar>(config: ModelConfig, params: &ModelParams<T>) -> Result<Self> {
        params.check_shapes(&config)?;
        Ok(Self {
            config,
            params: params.cast(),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let mut entries = Vec::new();
        for t in self.params.tensors() {
            entries.push(TensorEntry {
                name: t.name,
                shape: t.shape,
                offset,
            });
            offset += 4 * t.data.len() as u64;
        }
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            tensors: entries,
        })?;
        let mut out = Vec::with_capacity(12 + header.len() + offset as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.params.tensors() {
            for x in t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::InvalidCheckpoint(m.to_owned());
        if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing BLM1 magic"));
        }
        let header_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let header_end = 12usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("header length exceeds file size"))?;
        let header: Header = serde_json::from_slice(&bytes[12..header_end])?;
        header.config.validate()?;
        let data = &bytes[header_end..];

        let mut params = ModelParams::<f32>::zeros(&header.config);
        let mut slots = params.tensors_mut();
        if slots.len() != header.tensors.len() {
            return Err(bad("tensor manifest does not match config"));
        }
        let mut expected_offset = 0u64;
        for (slot, entry) in slots.iter_mut().zip(&header.tensors) {
            if slot.name != entry.name || slot.shape != entry.shape {
                return Err(Error::InvalidCheckpoint(format!(
                    "tensor {} {:?} where {} {:?} was expected",
                    entry.name, entry.shape, slot.name, slot.shape
                )));
            }
            if entry.offset != expected_offset {
                return Err(Error::InvalidCheckpoint(format!(
                    "tensor {} at offset {}, expected {}",
                    entry.name, entry.offset, expected_offset
                )));
            }
            let start = entry.offset as usize;
            let end = start + 4 * slot.data.len();
            let raw = data
                .get(start..end)
                .ok_or_else(|| Error::InvalidCheckpoint(format!("tensor {} truncated", entry.name)))?;
            for (x, chunk) in slot.data.iter_mut().zip(raw.chunks_exact(4)) {
                *x = f32::from_le_bytes(chunk.try_into().unwrap());
            }
            expected_offset = end as u64;
        }
        if expected_offset as usize != data.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        drop(slots);
        Ok(Self {
            config: header.config,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).at(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).at(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    #[test]
    fn layout_starts_with_magic_and_length_prefixed_json() {
        let cfg = ModelConfig::tiny(16);
        let ckpt = Checkpoint::new(cfg.clone(), &init_params::<f32>(&cfg, 9).unwrap()).unwrap();
        let bytes = ckpt.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"BLM1");
        let n = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[12..12 + n]).unwrap();
        assert_eq!(header["config"]["hidden"], 64);
        assert_eq!(header["tensors"][0]["name"], "token_embeddings");
        assert_eq!(header["tensors"][1]["offset"], 16 * 64 * 4);
        assert_eq!(bytes.len(), 12 + n + 4 * cfg.parameter_count());
        let first = f32::from_le_bytes(bytes[12 + n..16 + n].try_into().unwrap());
        assert_eq!(first, ckpt.params.token_embeddings[[0, 0]]);
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ckpt);
    }

    #[test]
    fn rejects_corruption() {
        let cfg = ModelConfig::tiny(16);
        let ckpt = Checkpoint::new(cfg.clone(), &init_params::<f32>(&cfg, 9).unwrap()).unwrap();
        let bytes = ckpt.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong_magic).is_err());
    }
}
