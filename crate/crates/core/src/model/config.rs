use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dimensions of the toy decoder. `d_ff` is the FFN intermediate width, the
/// axis that gets pruned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub vocab: usize,
    pub max_seq: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// The desk-scale model used throughout the tests and the CLI defaults.
    pub fn toy(seed: u64) -> Self {
        Self {
            d_model: 64,
            d_ff: 256,
            n_layers: 4,
            n_heads: 4,
            n_kv_heads: 2,
            vocab: 256,
            max_seq: 128,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.d_model == 0 || self.n_layers == 0 || self.vocab == 0 || self.max_seq == 0 {
            return bad("d_model, n_layers, vocab and max_seq must be positive");
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by n_heads");
        }
        if self.n_kv_heads == 0 || !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return bad("n_heads must be divisible by n_kv_heads");
        }
        if self.d_ff < 8 {
            return bad("d_ff must be at least 8");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.head_dim()
    }
}
