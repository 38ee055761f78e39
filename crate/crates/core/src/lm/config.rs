use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelMode {
    /// A learnable `vocab × vocab` table of next-token logits.
    Bigram,
    /// Pre-norm decoder-only transformer with learned positions.
    Transformer,
}

/// Architecture of a model. Bigram models only read `vocab_size` and
/// `context_len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: ModelMode,
    pub vocab_size: usize,
    pub context_len: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
}

impl ModelConfig {
    /// Desk-scale transformer: context 64, width 64, two layers of two heads.
    pub fn desk_transformer(vocab_size: usize) -> Self {
        Self {
            mode: ModelMode::Transformer,
            vocab_size,
            context_len: 64,
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            mlp_ratio: 4,
        }
    }

    pub fn bigram(vocab_size: usize, context_len: usize) -> Self {
        Self {
            mode: ModelMode::Bigram,
            vocab_size,
            context_len,
            d_model: 0,
            n_layers: 0,
            n_heads: 0,
            mlp_ratio: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 4 {
            return Err(Error::InvalidConfig(format!(
                "vocab_size must be at least 4, got {}",
                self.vocab_size
            )));
        }
        if self.context_len < 2 {
            return Err(Error::InvalidConfig(format!(
                "context_len must be at least 2, got {}",
                self.context_len
            )));
        }
        if self.mode == ModelMode::Transformer {
            if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 || self.mlp_ratio == 0 {
                return Err(Error::InvalidConfig(
                    "transformer dims, heads, layers and mlp_ratio must be positive".into(),
                ));
            }
            if !self.d_model.is_multiple_of(self.n_heads) {
                return Err(Error::InvalidConfig(format!(
                    "d_model {} is not divisible by n_heads {}",
                    self.d_model, self.n_heads
                )));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn hidden_dim(&self) -> usize {
        self.d_model * self.mlp_ratio
    }
}
