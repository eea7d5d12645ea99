use ndarray::Array2;

use super::ModelConfig;
use crate::error::{Error, Result};

/// Label value for positions that carry no MLM target.
pub const IGNORE_LABEL: i32 = -1;

/// A padded batch of token sequences with MLM targets and, optionally,
/// sentence-pair labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    pub input_ids: Array2<u32>,
    pub attention_mask: Array2<bool>,
    pub segment_ids: Array2<u8>,
    /// Gold token id at labeled positions, [`IGNORE_LABEL`] elsewhere.
    pub mlm_labels: Array2<i32>,
    /// 1 = sentences in original order / consecutive, 0 = not.
    pub pair_labels: Option<Vec<u8>>,
}

impl MaskedBatch {
    pub fn batch_size(&self) -> usize {
        self.input_ids.nrows()
    }

    pub fn seq_len(&self) -> usize {
        self.input_ids.ncols()
    }

    pub fn masked_count(&self) -> usize {
        self.mlm_labels.iter().filter(|&&l| l >= 0).count()
    }

    /// Rewrites every token id (inputs and labels) through `table`.
    pub fn remap(&mut self, table: &[u32]) -> Result<()> {
        let lookup = |id: u32| {
            table.get(id as usize).copied().ok_or(Error::UnknownTokenId {
                id,
                size: table.len(),
            })
        };
        for id in self.input_ids.iter_mut() {
            *id = lookup(*id)?;
        }
        for label in self.mlm_labels.iter_mut() {
            if *label >= 0 {
                *label = lookup(*label as u32)? as i32;
            }
        }
        Ok(())
    }

    /// Checks shapes, id ranges and segment values against `config`.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let (b, s) = self.input_ids.dim();
        let check = |name: &str, dim: (usize, usize)| {
            if dim.0 != b {
                return Err(Error::Shape {
                    dimension: format!("{name} batch"),
                    expected: b,
                    actual: dim.0,
                });
            }
            if dim.1 != s {
                return Err(Error::Shape {
                    dimension: format!("{name} sequence"),
                    expected: s,
                    actual: dim.1,
                });
            }
            Ok(())
        };
        check("attention_mask", self.attention_mask.dim())?;
        check("segment_ids", self.segment_ids.dim())?;
        check("mlm_labels", self.mlm_labels.dim())?;
        if s > config.max_seq_len {
            return Err(Error::Shape {
                dimension: "sequence length (max_seq_len)".into(),
                expected: config.max_seq_len,
                actual: s,
            });
        }
        if let Some(pairs) = &self.pair_labels {
            if pairs.len() != b {
                return Err(Error::Shape {
                    dimension: "pair_labels batch".into(),
                    expected: b,
                    actual: pairs.len(),
                });
            }
        }
        for ((row, position), &id) in self.input_ids.indexed_iter() {
            if id as usize >= config.vocab_size {
                return Err(Error::TokenOutOfRange {
                    id,
                    row,
                    position,
                    vocab_size: config.vocab_size,
                });
            }
        }
        for ((row, position), &label) in self.mlm_labels.indexed_iter() {
            if label >= 0 && label as usize >= config.vocab_size {
                return Err(Error::TokenOutOfRange {
                    id: label as u32,
                    row,
                    position,
                    vocab_size: config.vocab_size,
                });
            }
        }
        if let Some(&seg) = self.segment_ids.iter().find(|&&s| s > 1) {
            return Err(Error::Shape {
                dimension: "segment id value".into(),
                expected: 1,
                actual: seg as usize,
            });
        }
        Ok(())
    }
}
