use serde::{Deserialize, Serialize};

use crate::model::{Checkpoint, FfnTap, Stage};
use crate::numerics::{IndexSet, Matrix};
use crate::{Error, Result};

/// l2 norm of every down-projection column of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownColumnNorms {
    pub layer: usize,
    pub norms: Vec<f64>,
}

impl DownColumnNorms {
    pub fn from_down(layer: usize, down: &Matrix) -> Self {
        Self {
            layer,
            norms: down.col_norms(),
        }
    }

    pub fn for_checkpoint(ckpt: &Checkpoint) -> Vec<Self> {
        ckpt.layers
            .iter()
            .enumerate()
            .map(|(l, w)| Self::from_down(l, &w.down))
            .collect()
    }
}

/// Nonnegative per-channel importance of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScores {
    pub layer: usize,
    pub values: Vec<f64>,
    pub stage: Stage,
}

fn check_width(tap: &FfnTap, norms: &DownColumnNorms) -> Result<()> {
    if tap.width() != norms.norms.len() {
        return Err(Error::DimensionMismatch(format!(
            "tap width {} vs {} column norms",
            tap.width(),
            norms.norms.len()
        )));
    }
    Ok(())
}

#[inline]
fn score(tap: &FfnTap, norms: &DownColumnNorms, i: usize) -> f64 {
    let ss: f64 = (0..tap.tokens()).map(|t| tap.values.get(t, i).powi(2)).sum();
    ss.sqrt() * norms.norms[i]
}

/// `I_i = ||h_i||_2 * ||W_down[:, i]||_2`, the norm taken over the tokens in
/// the tap (the whole prompt at prefill, one token at a decode step).
///
/// This is the l2 aggregation over output rows of the element-wise scores
/// `|W_down[j, i]| * ||h_i||_2`, factored per column.
pub fn channel_importance(tap: &FfnTap, norms: &DownColumnNorms) -> Result<ChannelScores> {
    check_width(tap, norms)?;
    Ok(ChannelScores {
        layer: tap.layer,
        values: (0..tap.width()).map(|i| score(tap, norms, i)).collect(),
        stage: tap.stage,
    })
}

/// Same score, evaluated only for `channels`; every other entry is zero.
pub fn subset_importance(tap: &FfnTap, norms: &DownColumnNorms, channels: &IndexSet) -> Result<ChannelScores> {
    check_width(tap, norms)?;
    if let Some(m) = channels.max().filter(|&m| m >= tap.width()) {
        return Err(Error::IndexOutOfRange { index: m, len: tap.width() });
    }
    let mut values = vec![0.0; tap.width()];
    for &i in channels {
        values[i] = score(tap, norms, i);
    }
    Ok(ChannelScores {
        layer: tap.layer,
        values,
        stage: tap.stage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tap(rows: &[Vec<f64>], stage: Stage) -> FfnTap {
        let values = Matrix::from_rows(rows).unwrap();
        let computed = IndexSet::all(values.cols());
        FfnTap {
            layer: 0,
            stage,
            values,
            computed,
        }
    }

    #[test]
    fn single_token_hand_case() {
        let t = tap(&[vec![2.0, -3.0]], Stage::Decode(1));
        let n = DownColumnNorms {
            layer: 0,
            norms: vec![1.0, 2.0],
        };
        let s = channel_importance(&t, &n).unwrap();
        assert_eq!(s.values, vec![2.0, 6.0]);
        assert_eq!(s.stage, Stage::Decode(1));
    }

    #[test]
    fn zero_column_zero_score() {
        let down = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let n = DownColumnNorms::from_down(0, &down);
        assert_eq!(n.norms[0], 0.0);
        let t = tap(&[vec![100.0, 1.0]], Stage::Prefill);
        assert_eq!(channel_importance(&t, &n).unwrap().values[0], 0.0);
    }

    #[test]
    fn aggregates_over_tokens() {
        let t = tap(&[vec![3.0, 1.0], vec![4.0, 0.0]], Stage::Prefill);
        let n = DownColumnNorms {
            layer: 0,
            norms: vec![1.0, 1.0],
        };
        assert_eq!(channel_importance(&t, &n).unwrap().values, vec![5.0, 1.0]);
    }

    #[test]
    fn width_mismatch() {
        let t = tap(&[vec![1.0, 2.0, 3.0]], Stage::Prefill);
        let n = DownColumnNorms {
            layer: 0,
            norms: vec![1.0, 1.0],
        };
        assert!(matches!(
            channel_importance(&t, &n),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn subset_only_scores_requested() {
        let t = tap(&[vec![1.0, 2.0, 3.0]], Stage::Decode(2));
        let n = DownColumnNorms {
            layer: 0,
            norms: vec![1.0; 3],
        };
        let s = subset_importance(&t, &n, &IndexSet::from_unsorted(vec![2])).unwrap();
        assert_eq!(s.values, vec![0.0, 0.0, 3.0]);
    }
}
