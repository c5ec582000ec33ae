//! Toy pre-norm decoder: learned absolute positions, grouped-query attention
//! with a KV cache, SiLU-gated FFN and a tied output head.
//!
//! The FFN is the only place a controller can intervene. Prefill computes the
//! full intermediate and asks for a down-projection mask; decode asks first
//! which channels to compute and then which of those to keep.

mod cache;
mod checkpoint;
mod config;
mod controller;
mod forward;

pub use cache::KvCache;
pub use checkpoint::{Checkpoint, LayerWeights, FORMAT_VERSION};
pub use config::ModelConfig;
pub use controller::{DenseController, FfnController, FfnTap, ScoreDigest, Stage};
pub use forward::{decode_step, generate, prefill, Decoded, Generation, LayerStep, Prefill, StepRecord};
