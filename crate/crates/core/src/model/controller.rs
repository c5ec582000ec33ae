use serde::{Deserialize, Serialize};

use crate::numerics::{IndexSet, Matrix};
use crate::Result;

/// Where an FFN intermediate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Prefill,
    /// Decode step `t`, counted from 1 after the prompt.
    Decode(usize),
}

/// Post-activation FFN intermediate `h = silu(gate x) * (up x)` of one layer.
///
/// `values` is `tokens x d_ff`; during decode only the channels in `computed`
/// hold real values and the rest are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnTap {
    pub layer: usize,
    pub stage: Stage,
    pub values: Matrix,
    pub computed: IndexSet,
}

impl FfnTap {
    pub fn width(&self) -> usize {
        self.values.cols()
    }

    pub fn tokens(&self) -> usize {
        self.values.rows()
    }
}

/// Min / max / mean of the scores a controller evaluated at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreDigest {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl ScoreDigest {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let (mut min, mut max, mut sum, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
        for v in values {
            min = min.min(v);
            max = max.max(v);
            sum += v;
            n += 1;
        }
        (n > 0).then(|| Self {
            min,
            max,
            mean: sum / n as f64,
        })
    }
}

/// Chooses which FFN channels run, layer by layer.
///
/// Prefill hands over the full intermediate and gets back the channel set
/// used by the down-projection. Decode is two-phase: the first call names the
/// channels whose gate/up values are computed, the second sees that
/// restricted intermediate and returns the final active set, which must be a
/// subset of the first.
pub trait FfnController {
    fn prefill_active(&mut self, tap: &FfnTap) -> Result<IndexSet>;

    fn decode_compute_set(&mut self, layer: usize, step: usize) -> Result<IndexSet>;

    fn decode_active(&mut self, tap: &FfnTap) -> Result<IndexSet>;

    /// Digest of the scores behind the most recent decision for `layer`.
    fn last_digest(&self, _layer: usize) -> Option<ScoreDigest> {
        None
    }
}

/// Runs every channel.
#[derive(Debug, Clone)]
pub struct DenseController {
    d_ff: usize,
}

impl DenseController {
    pub fn new(d_ff: usize) -> Self {
        Self { d_ff }
    }
}

impl FfnController for DenseController {
    fn prefill_active(&mut self, _tap: &FfnTap) -> Result<IndexSet> {
        Ok(IndexSet::all(self.d_ff))
    }

    fn decode_compute_set(&mut self, _layer: usize, _step: usize) -> Result<IndexSet> {
        Ok(IndexSet::all(self.d_ff))
    }

    fn decode_active(&mut self, _tap: &FfnTap) -> Result<IndexSet> {
        Ok(IndexSet::all(self.d_ff))
    }
}

impl<C: FfnController + ?Sized> FfnController for &mut C {
    fn prefill_active(&mut self, tap: &FfnTap) -> Result<IndexSet> {
        (**self).prefill_active(tap)
    }

    fn decode_compute_set(&mut self, layer: usize, step: usize) -> Result<IndexSet> {
        (**self).decode_compute_set(layer, step)
    }

    fn decode_active(&mut self, tap: &FfnTap) -> Result<IndexSet> {
        (**self).decode_active(tap)
    }

    fn last_digest(&self, layer: usize) -> Option<ScoreDigest> {
        (**self).last_digest(layer)
    }
}

impl<C: FfnController + ?Sized> FfnController for Box<C> {
    fn prefill_active(&mut self, tap: &FfnTap) -> Result<IndexSet> {
        (**self).prefill_active(tap)
    }

    fn decode_compute_set(&mut self, layer: usize, step: usize) -> Result<IndexSet> {
        (**self).decode_compute_set(layer, step)
    }

    fn decode_active(&mut self, tap: &FfnTap) -> Result<IndexSet> {
        (**self).decode_active(tap)
    }

    fn last_digest(&self, layer: usize) -> Option<ScoreDigest> {
        (**self).last_digest(layer)
    }
}
