use serde::{Deserialize, Serialize};

use crate::model::ModelConfig;
use crate::{Error, Result};

/// Per-layer dimensions that decide how much of a block is FFN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttnFfnDims {
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub head_dim: usize,
}

impl AttnFfnDims {
    pub const fn new(d_model: usize, d_ff: usize, n_heads: usize, n_kv_heads: usize, head_dim: usize) -> Self {
        Self {
            d_model,
            d_ff,
            n_heads,
            n_kv_heads,
            head_dim,
        }
    }

    /// q and o projections plus the grouped k and v projections.
    pub fn attn_params(&self) -> f64 {
        self.d_model as f64 * (2 * self.d_model + 2 * self.n_kv_heads * self.head_dim) as f64
    }

    /// gate, up and down.
    pub fn ffn_params(&self) -> f64 {
        3.0 * self.d_model as f64 * self.d_ff as f64
    }
}

impl From<&ModelConfig> for AttnFfnDims {
    fn from(c: &ModelConfig) -> Self {
        Self::new(c.d_model, c.d_ff, c.n_heads, c.n_kv_heads, c.head_dim())
    }
}

/// Published model shapes.
pub const PRESETS: &[(&str, AttnFfnDims)] = &[
    ("llama2-7b", AttnFfnDims::new(4096, 11008, 32, 32, 128)),
    ("llama2-13b", AttnFfnDims::new(5120, 13824, 40, 40, 128)),
    ("llama2-70b", AttnFfnDims::new(8192, 28672, 64, 8, 128)),
    ("llama3.1-8b", AttnFfnDims::new(4096, 14336, 32, 8, 128)),
    ("llama3.1-70b", AttnFfnDims::new(8192, 28672, 64, 8, 128)),
];

pub fn preset(name: &str) -> Option<AttnFfnDims> {
    PRESETS
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|(_, d)| *d)
}

/// FFN-only pruning ratio that removes the same number of block parameters
/// as pruning attention and FFN uniformly at `target_pr`.
pub fn ffn_pruning_ratio(target_pr: f64, dims: &AttnFfnDims) -> Result<f64> {
    if !(0.0..1.0).contains(&target_pr) {
        return Err(Error::InvalidConfig(format!("target ratio {target_pr} outside [0, 1)")));
    }
    if dims.d_model == 0 || dims.d_ff == 0 {
        return Err(Error::InvalidConfig("d_model and d_ff must be positive".into()));
    }
    let attn = dims.attn_params();
    let ffn = dims.ffn_params();
    let r = target_pr * (attn + ffn) / ffn;
    if r >= 1.0 {
        return Err(Error::UnreachableRatio(r));
    }
    Ok(r.max(0.0))
}
