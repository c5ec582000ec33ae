//! Analytic FFN multiply-accumulate counts for the decode phase.
//!
//! Counts are per token per layer, scaled by layers and steps. Activation and
//! norm costs are ignored. Scoring a channel costs one multiply (activation
//! magnitude times the cached column norm).

use serde::{Deserialize, Serialize};

use crate::model::ModelConfig;
use crate::pruning::{Mode, PartitionCounts};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub dense_ffn_macs: u64,
    pub ideal_pruned_ffn_macs: u64,
    pub method_ffn_macs: u64,
    /// `100 * (method - ideal) / dense`.
    pub overhead_pct: f64,
}

/// MACs for one token through one FFN layer: `(dense, ideal, method)`.
pub fn per_token_macs(d_model: usize, mode: Mode, counts: &PartitionCounts) -> (u64, u64, u64) {
    let d = d_model as u64;
    let f = counts.d_ff as u64;
    let r = counts.retained as u64;
    let c = counts.candidate as u64;
    let b = counts.budget as u64;
    let dense = 3 * d * f;
    let ideal = 3 * d * b;
    match mode {
        Mode::Dense => (dense, dense, dense),
        Mode::StaticPrefill | Mode::Random => (dense, ideal, ideal),
        // gate/up over retained + candidates, down over the budget, plus
        // one multiply per scored candidate
        Mode::Pop => (dense, ideal, d * (2 * (r + c) + b) + c),
        // pruned FFN plus a full-width scoring pass: one projection-width
        // pass over every channel and one multiply per channel
        Mode::FullReeval => (dense, ideal, ideal + d * f + f),
    }
}

pub fn ffn_flops_dims(
    d_model: usize,
    n_layers: usize,
    mode: Mode,
    counts: &PartitionCounts,
    n_steps: usize,
) -> FlopsReport {
    let (dense, ideal, method) = per_token_macs(d_model, mode, counts);
    let scale = (n_layers * n_steps) as u64;
    let overhead_pct = if dense == 0 {
        0.0
    } else {
        100.0 * (method - ideal) as f64 / dense as f64
    };
    FlopsReport {
        dense_ffn_macs: dense * scale,
        ideal_pruned_ffn_macs: ideal * scale,
        method_ffn_macs: method * scale,
        overhead_pct,
    }
}

pub fn ffn_flops(config: &ModelConfig, mode: Mode, counts: &PartitionCounts, n_steps: usize) -> FlopsReport {
    ffn_flops_dims(config.d_model, config.n_layers, mode, counts, n_steps)
}
