use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape hyperparameters of the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    #[serde(default = "default_ffn_multiplier")]
    pub ffn_multiplier: usize,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
}

fn default_ffn_multiplier() -> usize {
    4
}

fn default_dropout() -> f64 {
    0.1
}

impl ModelConfig {
    /// 12 layers, 768 hidden units, 12 heads, 512 positions.
    pub fn base(vocab_size: usize) -> Self {
        Self {
            layers: 12,
            hidden: 768,
            heads: 12,
            max_seq_len: 512,
            vocab_size,
            ffn_multiplier: 4,
            dropout_rate: 0.1,
        }
    }

    /// 2 layers, 64 hidden units, 2 heads; trainable on a laptop CPU.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            layers: 2,
            hidden: 64,
            heads: 2,
            max_seq_len: 64,
            vocab_size,
            ffn_multiplier: 4,
            dropout_rate: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidModelConfig(m));
        if self.layers == 0 || self.hidden == 0 || self.heads == 0 {
            return fail("layers, hidden and heads must be positive".into());
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return fail(format!(
                "hidden ({}) must be divisible by heads ({})",
                self.hidden, self.heads
            ));
        }
        if self.max_seq_len == 0 || self.vocab_size == 0 || self.ffn_multiplier == 0 {
            return fail("max_seq_len, vocab_size and ffn_multiplier must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.hidden * self.ffn_multiplier
    }

    /// Number of trainable scalars, computed from the shapes alone.
    pub fn parameter_count(&self) -> usize {
        let (h, f, v) = (self.hidden, self.ffn_dim(), self.vocab_size);
        let embeddings = v * h + self.max_seq_len * h + 2 * h + 2 * h;
        let attention = 4 * (h * h + h) + 2 * h;
        let ffn = h * f + f + f * h + h + 2 * h;
        let heads = h * 2 + 2 + v;
        embeddings + self.layers * (attention + ffn) + heads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_preset_is_about_110m() {
        let cfg = ModelConfig::base(30_000);
        cfg.validate().unwrap();
        let n = cfg.parameter_count() as f64;
        assert!((n - 110e6).abs() / 110e6 < 0.05, "{n}");
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut cfg = ModelConfig::tiny(100);
        cfg.heads = 3;
        assert!(cfg.validate().unwrap_err().to_string().contains("divisible"));
    }
}
