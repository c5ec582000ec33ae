//! Rank dynamics, fidelity against a dense run and FFN MAC accounting.

mod fidelity;
mod flops;
mod rank;

pub use fidelity::{fidelity, kl_from_logits, FidelityReport};
pub use flops::{ffn_flops, ffn_flops_dims, per_token_macs, FlopsReport};
pub use rank::{mean_rank_diff, rank_dynamics, top_half_overlap, RankDynamics};
