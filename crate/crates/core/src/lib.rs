//! Partition-guided online pruning (POP) of transformer FFN channels.
//!
//! The crate is split the same way the simulator is layered:
//!
//! * [`numerics`] – deterministic kernels, ordering and the SplitMix64 stream.
//! * [`model`] – a toy pre-norm decoder with a KV cache whose FFN runs in two
//!   phases so a controller can pick the active channel set per step.
//! * [`pruning`] – channel importance, the retained/candidate/pruned partition,
//!   per-step candidate selection, the ablation controllers and the
//!   attention-preserving FFN ratio.
//! * [`metrics`] – rank dynamics, fidelity against a dense run and analytic
//!   FFN MAC accounting.

pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod pruning;

pub use error::{Error, Result};
