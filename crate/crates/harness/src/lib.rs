//! Experiment harness for activation-guided FFN pruning on a toy decoder.
//!
//! A run loads an [`ExperimentSpec`], generates a dense reference, replays
//! the same tokens under the chosen pruning mode and writes trace, metrics
//! and partition files.

mod error;
pub mod output;
pub mod runner;
pub mod spec;
pub mod sweep;

pub use error::{HarnessError, Result};
pub use runner::{run, RunOutcome};
pub use spec::{Emit, ExperimentSpec, ModelSource, PromptSpec, PruningSpec, Resolved};
pub use sweep::{compare, sweep, SummaryRow};
