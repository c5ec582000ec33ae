use serde::{Deserialize, Serialize};

use super::{ChannelScores, PruningConfig};
use crate::model::Stage;
use crate::numerics::{rank_descending, top_k_of, IndexSet};
use crate::{Error, Result};

/// Retained / candidate / pruned split of one layer's FFN channels.
///
/// `retained` always runs, `pruned` never does for the rest of the
/// generation, and each step tops `retained` up to `budget` channels from
/// `candidate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub layer: usize,
    pub retained: IndexSet,
    pub candidate: IndexSet,
    pub pruned: IndexSet,
    pub budget: usize,
}

impl Partition {
    pub fn d_ff(&self) -> usize {
        self.retained.len() + self.candidate.len() + self.pruned.len()
    }

    /// Channels whose gate/up values are computed at a decode step.
    pub fn compute_set(&self) -> IndexSet {
        self.retained.union(&self.candidate)
    }

    /// `retained` plus the best `budget - |retained|` candidates under
    /// `scores`. Only candidate entries are read.
    pub fn select_with(&self, scores: &[f64]) -> Result<IndexSet> {
        if scores.len() != self.d_ff() {
            return Err(Error::DimensionMismatch(format!(
                "{} scores for {} channels",
                scores.len(),
                self.d_ff()
            )));
        }
        let extra = self.budget.checked_sub(self.retained.len()).ok_or_else(|| {
            Error::Controller(format!(
                "budget {} below retained size {}",
                self.budget,
                self.retained.len()
            ))
        })?;
        if extra > self.candidate.len() {
            return Err(Error::Controller(format!(
                "budget {} exceeds retained + candidate {}",
                self.budget,
                self.retained.len() + self.candidate.len()
            )));
        }
        let picked = top_k_of(scores, self.candidate.as_slice(), extra)?;
        Ok(self.retained.union(&picked))
    }
}

/// Ranks prefill scores and splits them by count: the lowest
/// `round(clamp(r - delta) * d_ff)` channels are pruned, the highest
/// `d_ff - round(clamp(r + delta) * d_ff)` retained, the rest are candidates.
pub fn build_partition(scores: &ChannelScores, cfg: &PruningConfig, d_ff: usize) -> Result<Partition> {
    if scores.stage != Stage::Prefill {
        return Err(Error::Controller("partition needs prefill scores".into()));
    }
    if scores.values.len() != d_ff {
        return Err(Error::DimensionMismatch(format!(
            "{} scores for d_ff {d_ff}",
            scores.values.len()
        )));
    }
    let counts = cfg.counts(d_ff)?;
    let order = rank_descending(&scores.values)?;
    let (top, rest) = order.split_at(counts.retained);
    let (mid, low) = rest.split_at(counts.candidate);
    Ok(Partition {
        layer: scores.layer,
        retained: IndexSet::from_unsorted(top.to_vec()),
        candidate: IndexSet::from_unsorted(mid.to_vec()),
        pruned: IndexSet::from_unsorted(low.to_vec()),
        budget: counts.budget,
    })
}

/// Per-step active set: `retained` plus the top candidates by the step's
/// scores, exactly `budget` channels.
pub fn select_step_active(partition: &Partition, step_scores: &ChannelScores) -> Result<IndexSet> {
    if !matches!(step_scores.stage, Stage::Decode(_)) {
        return Err(Error::Controller("step selection needs decode-step scores".into()));
    }
    partition.select_with(&step_scores.values)
}
