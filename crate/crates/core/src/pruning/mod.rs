//! Partition-guided online pruning.
//!
//! At prefill every layer's channels are scored on the prompt and split by
//! rank into a retained head, a pruned tail and a candidate band of width
//! `gamma` around the pruning threshold. At each decode step only the band
//! is re-scored, and the best candidates top the retained set up to an exact
//! channel budget.

mod config;
mod controllers;
mod importance;
mod partition;
mod ratio;

pub use config::{Mode, PartitionCounts, PruningConfig};
pub use controllers::{
    Controller, FullReevalController, PopController, RandomController, StaticPrefillController,
};
pub use importance::{channel_importance, subset_importance, ChannelScores, DownColumnNorms};
pub use partition::{build_partition, select_step_active, Partition};
pub use ratio::{ffn_pruning_ratio, preset, AttnFfnDims, PRESETS};
