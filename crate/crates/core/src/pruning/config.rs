use serde::{Deserialize, Serialize};

use crate::numerics::round_half_up;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Dense,
    Pop,
    /// Prefill mask reused for every decode step.
    StaticPrefill,
    /// Top-budget over all channels re-chosen at every decode step.
    FullReeval,
    /// Seeded uniform mask fixed at prefill.
    Random,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Dense,
        Mode::Pop,
        Mode::StaticPrefill,
        Mode::FullReeval,
        Mode::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Dense => "dense",
            Mode::Pop => "pop",
            Mode::StaticPrefill => "static_prefill",
            Mode::FullReeval => "full_reeval",
            Mode::Random => "random",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mode {s:?}")))
    }
}

/// Pruning settings for one generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruningConfig {
    /// FFN pruning ratio `r`: fraction of the `d_ff` channels inactive at each step.
    pub ffn_ratio: f64,
    /// Partition fraction; the candidate band spans quantiles `r ± gamma/2`.
    pub gamma: f64,
    pub mode: Mode,
    pub random_seed: u64,
}

impl PruningConfig {
    pub fn new(mode: Mode, ffn_ratio: f64, gamma: f64) -> Self {
        Self {
            ffn_ratio,
            gamma,
            mode,
            random_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.ffn_ratio) {
            return Err(Error::InvalidConfig(format!(
                "ffn_ratio {} outside [0, 1)",
                self.ffn_ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!(
                "gamma {} outside [0, 1]",
                self.gamma
            )));
        }
        Ok(())
    }

    /// Half-width of the candidate band.
    pub fn delta(&self) -> f64 {
        self.gamma / 2.0
    }

    pub fn counts(&self, d_ff: usize) -> Result<PartitionCounts> {
        PartitionCounts::new(d_ff, self.ffn_ratio, self.gamma)
    }
}

/// Region sizes of a partition; they depend only on `(d_ff, r, gamma)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionCounts {
    pub d_ff: usize,
    pub retained: usize,
    pub candidate: usize,
    pub pruned: usize,
    /// Active channels per step.
    pub budget: usize,
}

impl PartitionCounts {
    /// Rank-count form of the `q(r - delta)` / `q(r + delta)` thresholds with
    /// the band clamped to `[0, 1]` and half-up rounding.
    pub fn new(d_ff: usize, ratio: f64, gamma: f64) -> Result<Self> {
        PruningConfig::new(Mode::Pop, ratio, gamma).validate()?;
        let n = d_ff as f64;
        let delta = gamma / 2.0;
        let lo = (ratio - delta).max(0.0);
        let hi = (ratio + delta).min(1.0);
        let pruned = round_half_up(lo * n).min(d_ff);
        let retained = d_ff - round_half_up(hi * n).min(d_ff);
        let budget = d_ff - round_half_up(ratio * n).min(d_ff);
        Ok(Self {
            d_ff,
            retained,
            candidate: d_ff - pruned - retained,
            pruned,
            budget,
        })
    }

    /// Counts for a run that keeps every channel.
    pub fn dense(d_ff: usize) -> Self {
        Self {
            d_ff,
            retained: d_ff,
            candidate: 0,
            pruned: 0,
            budget: d_ff,
        }
    }
}
