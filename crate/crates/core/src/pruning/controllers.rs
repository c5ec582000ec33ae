//! FFN controllers: POP and the ablation baselines.

use super::{
    build_partition, channel_importance, select_step_active, subset_importance, ChannelScores, DownColumnNorms,
    Mode, Partition, PartitionCounts, PruningConfig,
};
use crate::model::{Checkpoint, DenseController, FfnController, FfnTap, ScoreDigest, Stage};
use crate::numerics::{top_k_of, IndexSet, SplitMix64};
use crate::{Error, Result};

fn not_ready(layer: usize) -> Error {
    Error::Controller(format!("layer {layer} consulted before prefill"))
}

fn stored<T>(slot: &[Option<T>], layer: usize) -> Result<&T> {
    slot.get(layer).and_then(Option::as_ref).ok_or_else(|| not_ready(layer))
}

fn top_budget(scores: &[f64], budget: usize) -> Result<IndexSet> {
    let all: Vec<usize> = (0..scores.len()).collect();
    top_k_of(scores, &all, budget)
}

/// Partition at prefill, candidate re-selection at every decode step.
#[derive(Debug, Clone)]
pub struct PopController {
    cfg: PruningConfig,
    d_ff: usize,
    norms: Vec<DownColumnNorms>,
    partitions: Vec<Option<Partition>>,
    digests: Vec<Option<ScoreDigest>>,
}

impl PopController {
    pub fn new(cfg: PruningConfig, ckpt: &Checkpoint) -> Result<Self> {
        cfg.validate()?;
        let n = ckpt.config.n_layers;
        Ok(Self {
            cfg,
            d_ff: ckpt.config.d_ff,
            norms: DownColumnNorms::for_checkpoint(ckpt),
            partitions: vec![None; n],
            digests: vec![None; n],
        })
    }

    pub fn partitions(&self) -> Vec<Partition> {
        self.partitions.iter().flatten().cloned().collect()
    }
}

impl FfnController for PopController {
    fn prefill_active(&mut self, tap: &FfnTap) -> Result<IndexSet> {
        let scores = channel_importance(tap, &self.norms[tap.layer])?;
        let partition = build_partition(&scores, &self.cfg, self.d_ff)?;
        // prefill itself runs under the budget, filled by prefill scores
        let active = partition.select_with(&scores.values)?;
        self.partitions[tap.layer] = Some(partition);
        Ok(active)
    }

    fn decode_compute_set(&mut self, layer: usize, _step: usize) -> Result<IndexSet> {
        Ok(stored(&self.partitions, layer)?.compute_set())
    }

    fn decode_active(&mut self, tap: &FfnTap) -> Result<IndexSet> {
        let partition = stored(&self.partitions, tap.layer)?;
        let scores = subset_importance(tap, &self.norms[tap.layer], &partition.candidate)?;
        let active = select_step_active(partition, &scores)?;
        self.digests[tap.layer] = ScoreDigest::of(partition.candidate.iter().map(|&i| scores.values[i]));
        Ok(active)
    }

    fn last_digest(&self, layer: usize) -> Option<ScoreDigest> {
        self.digests.get(layer).copied().flatten()
    }
}

/// Top-budget prefill mask reused for every step.
#[derive(Debug, Clone)]
pub struct StaticPrefillController {
    budget: usize,
    norms: Vec<DownColumnNorms>,
    masks: Vec<Option<IndexSet>>,
}

impl StaticPrefillController {
    pub fn new(cfg: PruningConfig, ckpt: &Checkpoint) -> Result<Self> {
        let counts = cfg.counts(ckpt.config.d_ff)?;
        Ok(Self {
            budget: counts.budget,
            norms: DownColumnNorms::for_checkpoint(ckpt),
            masks: vec![None; ckpt.config.n_layers],
        })
    }

    pub fn masks(&self) -> Vec<IndexSet> {
        self.masks.iter().flatten().cloned().collect()
    }
}

impl FfnController for StaticPrefillController {
    fn prefill_active(&mut self, tap: &FfnTap) -> Result<IndexSet> {
        let scores = channel_importance(tap, &self.norms[tap.layer])?;
        let mask = top_budget(&scores.values, self.budget)?;
        self.masks[tap.layer] = Some(mask.clone());
        Ok(mask)
    }

    fn decode_compute_set(&mut self, layer: usize, _step: usize) -> Result<IndexSet> {
        stored(&self.masks, layer).cloned()
    }

    fn decode_active(&mut self, tap: &FfnTap) -> Result<IndexSet> {
        stored(&self.masks, tap.layer).cloned()
    }
}

/// Scores every channel at every step and keeps the top budget. Records all
/// scores so rank dynamics can be computed afterwards.
#[derive(Debug, Clone)]
pub struct FullReevalController {
    budget: usize,
    norms: Vec<DownColumnNorms>,
    prefill_scores: Vec<Option<ChannelScores>>,
    step_scores: Vec<Vec<ChannelScores>>,
    digests: Vec<Option<ScoreDigest>>,
}

impl FullReevalController {
    pub fn new(cfg: PruningConfig, ckpt: &Checkpoint) -> Result<Self> {
        let counts = cfg.counts(ckpt.config.d_ff)?;
        let n = ckpt.config.n_layers;
        Ok(Self {
            budget: counts.budget,
            norms: DownColumnNorms::for_checkpoint(ckpt),
            prefill_scores: vec![None; n],
            step_scores: vec![Vec::new(); n],
            digests: vec![None; n],
        })
    }

    pub fn prefill_scores(&self, layer: usize) -> Option<&ChannelScores> {
        self.prefill_scores.get(layer).and_then(Option::as_ref)
    }

    /// Full-width scores of every decode step so far, in step order.
    pub fn step_scores(&self, layer: usize) -> &[ChannelScores] {
        &self.step_scores[layer]
    }
}

impl FfnController for FullReevalController {
    fn prefill_active(&mut self, tap: &FfnTap) -> Result<IndexSet> {
        let scores = channel_importance(tap, &self.norms[tap.layer])?;
        let mask = top_budget(&scores.values, self.budget)?;
        self.prefill_scores[tap.layer] = Some(scores);
        Ok(mask)
    }

    fn decode_compute_set(&mut self, layer: usize, _step: usize) -> Result<IndexSet> {
        stored(&self.prefill_scores, layer)?;
        Ok(IndexSet::all(self.norms[layer].norms.len()))
    }

    fn decode_active(&mut self, tap: &FfnTap) -> Result<IndexSet> {
        stored(&self.prefill_scores, tap.layer)?;
        let scores = channel_importance(tap, &self.norms[tap.layer])?;
        let active = top_budget(&scores.values, self.budget)?;
        self.digests[tap.layer] = ScoreDigest::of(scores.values.iter().copied());
        self.step_scores[tap.layer].push(scores);
        Ok(active)
    }

    fn last_digest(&self, layer: usize) -> Option<ScoreDigest> {
        self.digests.get(layer).copied().flatten()
    }
}

/// Seeded uniform budget-size subset per layer, fixed at prefill.
#[derive(Debug, Clone)]
pub struct RandomController {
    budget: usize,
    d_ff: usize,
    seed: u64,
    masks: Vec<Option<IndexSet>>,
}

impl RandomController {
    pub fn new(cfg: PruningConfig, ckpt: &Checkpoint) -> Result<Self> {
        let counts = cfg.counts(ckpt.config.d_ff)?;
        Ok(Self {
            budget: counts.budget,
            d_ff: ckpt.config.d_ff,
            seed: cfg.random_seed,
            masks: vec![None; ckpt.config.n_layers],
        })
    }

    pub fn masks(&self) -> Vec<IndexSet> {
        self.masks.iter().flatten().cloned().collect()
    }
}

/// First `k` entries of a Fisher-Yates shuffle of `0..n`.
fn sample_subset(rng: &mut SplitMix64, n: usize, k: usize) -> IndexSet {
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + rng.next_below((n - i) as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(k);
    IndexSet::from_unsorted(pool)
}

impl FfnController for RandomController {
    fn prefill_active(&mut self, tap: &FfnTap) -> Result<IndexSet> {
        let mut rng = SplitMix64::keyed(&[self.seed, tap.layer as u64]);
        let mask = sample_subset(&mut rng, self.d_ff, self.budget);
        self.masks[tap.layer] = Some(mask.clone());
        Ok(mask)
    }

    fn decode_compute_set(&mut self, layer: usize, _step: usize) -> Result<IndexSet> {
        stored(&self.masks, layer).cloned()
    }

    fn decode_active(&mut self, tap: &FfnTap) -> Result<IndexSet> {
        stored(&self.masks, tap.layer).cloned()
    }
}

/// Any controller selected by [`Mode`].
#[derive(Debug, Clone)]
pub enum Controller {
    Dense(DenseController),
    Pop(PopController),
    StaticPrefill(StaticPrefillController),
    FullReeval(FullReevalController),
    Random(RandomController),
}

impl Controller {
    pub fn new(cfg: PruningConfig, ckpt: &Checkpoint) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.mode {
            Mode::Dense => Controller::Dense(DenseController::new(ckpt.config.d_ff)),
            Mode::Pop => Controller::Pop(PopController::new(cfg, ckpt)?),
            Mode::StaticPrefill => Controller::StaticPrefill(StaticPrefillController::new(cfg, ckpt)?),
            Mode::FullReeval => Controller::FullReeval(FullReevalController::new(cfg, ckpt)?),
            Mode::Random => Controller::Random(RandomController::new(cfg, ckpt)?),
        })
    }

    pub fn mode(&self) -> Mode {
        match self {
            Controller::Dense(_) => Mode::Dense,
            Controller::Pop(_) => Mode::Pop,
            Controller::StaticPrefill(_) => Mode::StaticPrefill,
            Controller::FullReeval(_) => Mode::FullReeval,
            Controller::Random(_) => Mode::Random,
        }
    }

    /// Region sizes this controller runs with; dense keeps all channels.
    pub fn counts(cfg: &PruningConfig, d_ff: usize) -> Result<PartitionCounts> {
        match cfg.mode {
            Mode::Dense => Ok(PartitionCounts::dense(d_ff)),
            _ => cfg.counts(d_ff),
        }
    }

    fn inner(&mut self) -> &mut dyn FfnController {
        match self {
            Controller::Dense(c) => c,
            Controller::Pop(c) => c,
            Controller::StaticPrefill(c) => c,
            Controller::FullReeval(c) => c,
            Controller::Random(c) => c,
        }
    }

    fn inner_ref(&self) -> &dyn FfnController {
        match self {
            Controller::Dense(c) => c,
            Controller::Pop(c) => c,
            Controller::StaticPrefill(c) => c,
            Controller::FullReeval(c) => c,
            Controller::Random(c) => c,
        }
    }
}

impl FfnController for Controller {
    fn prefill_active(&mut self, tap: &FfnTap) -> Result<IndexSet> {
        debug_assert_eq!(tap.stage, Stage::Prefill);
        self.inner().prefill_active(tap)
    }

    fn decode_compute_set(&mut self, layer: usize, step: usize) -> Result<IndexSet> {
        self.inner().decode_compute_set(layer, step)
    }

    fn decode_active(&mut self, tap: &FfnTap) -> Result<IndexSet> {
        self.inner().decode_active(tap)
    }

    fn last_digest(&self, layer: usize) -> Option<ScoreDigest> {
        self.inner_ref().last_digest(layer)
    }
}
