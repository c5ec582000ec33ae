use serde::{Deserialize, Serialize};

use crate::numerics::{rank_descending, ranks_of};
use crate::{Error, Result};

/// How far each decode step's channel ranking drifts from the prefill one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDynamics {
    pub layer: usize,
    /// Mean absolute rank displacement per step, in raw rank units.
    pub mean_rank_diff: Vec<f64>,
    /// Fraction of the prefill top half still in the step's top half.
    pub top_half_overlap: Vec<f64>,
}

/// `|TopHalf(a) ∩ TopHalf(b)| / floor(n/2)` for two rankings (orders) of
/// the same `n` channels. Defined as 1 when `n < 2`.
pub fn top_half_overlap(order_a: &[usize], order_b: &[usize]) -> f64 {
    let n = order_a.len();
    let half = n / 2;
    if half == 0 {
        return 1.0;
    }
    let mut in_a = vec![false; n];
    for &i in &order_a[..half] {
        in_a[i] = true;
    }
    let shared = order_b[..half].iter().filter(|&&i| in_a[i]).count();
    shared as f64 / half as f64
}

/// Mean of `|rank_b(i) - rank_a(i)|` over channels.
pub fn mean_rank_diff(order_a: &[usize], order_b: &[usize]) -> f64 {
    let ra = ranks_of(order_a);
    let rb = ranks_of(order_b);
    let total: usize = ra.iter().zip(&rb).map(|(a, b)| a.abs_diff(*b)).sum();
    total as f64 / ra.len().max(1) as f64
}

pub fn rank_dynamics(layer: usize, prefill: &[f64], steps: &[Vec<f64>]) -> Result<RankDynamics> {
    let base = rank_descending(prefill)?;
    let mut out = RankDynamics {
        layer,
        mean_rank_diff: Vec::with_capacity(steps.len()),
        top_half_overlap: Vec::with_capacity(steps.len()),
    };
    for (t, s) in steps.iter().enumerate() {
        if s.len() != prefill.len() {
            return Err(Error::DimensionMismatch(format!(
                "step {} has {} scores, prefill has {}",
                t + 1,
                s.len(),
                prefill.len()
            )));
        }
        let order = rank_descending(s)?;
        out.mean_rank_diff.push(mean_rank_diff(&base, &order));
        out.top_half_overlap.push(top_half_overlap(&base, &order));
    }
    Ok(out)
}
