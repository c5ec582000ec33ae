//! Deterministic kernels and ordering primitives.
//!
//! Every reduction runs in a fixed order so two runs of the same input are
//! bitwise identical; tests rely on that.

mod matrix;
mod rng;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use matrix::{masked_matvec, matmul, matvec, matvec_rows, Matrix};
pub use rng::{splitmix_next, SplitMix64};

/// Sorted, duplicate-free set of indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn all(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn from_unsorted(mut v: Vec<usize>) -> Self {
        v.sort_unstable();
        v.dedup();
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> Option<usize> {
        self.0.last().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, usize> {
        self.0.iter()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn is_subset(&self, other: &IndexSet) -> bool {
        self.0.iter().all(|&i| other.contains(i))
    }

    pub fn is_disjoint(&self, other: &IndexSet) -> bool {
        self.0.iter().all(|&i| !other.contains(i))
    }

    pub fn union(&self, other: &IndexSet) -> IndexSet {
        let mut v = Vec::with_capacity(self.len() + other.len());
        v.extend_from_slice(&self.0);
        v.extend_from_slice(&other.0);
        Self::from_unsorted(v)
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }
}

impl FromIterator<usize> for IndexSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        Self::from_unsorted(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a IndexSet {
    type Item = &'a usize;
    type IntoIter = std::slice::Iter<'a, usize>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Descending-by-score total order on indices; equal scores go to the lower index.
#[inline]
pub fn cmp_desc(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b]
        .partial_cmp(&scores[a])
        .unwrap_or(Ordering::Equal)
        .then(a.cmp(&b))
}

/// Permutation of `0..n` ordering `scores` from largest to smallest, ties by
/// ascending index.
pub fn rank_descending(scores: &[f64]) -> Result<Vec<usize>> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores contain NaN".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| cmp_desc(scores, a, b));
    Ok(idx)
}

/// Inverse of [`rank_descending`]: `rank[i]` is the position of channel `i`.
pub fn ranks_of(order: &[usize]) -> Vec<usize> {
    let mut rank = vec![0; order.len()];
    for (pos, &i) in order.iter().enumerate() {
        rank[i] = pos;
    }
    rank
}

/// Top `k` of `pool` by `scores` using the same total order as
/// [`rank_descending`].
pub fn top_k_of(scores: &[f64], pool: &[usize], k: usize) -> Result<IndexSet> {
    if pool.iter().any(|&i| scores[i].is_nan()) {
        return Err(Error::NonFinite("scores contain NaN".into()));
    }
    let mut p = pool.to_vec();
    p.sort_by(|&a, &b| cmp_desc(scores, a, b));
    p.truncate(k);
    Ok(IndexSet::from_unsorted(p))
}

/// Max-subtracted softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = x.iter().map(|v| (v - m).exp()).sum();
    let lz = z.ln() + m;
    x.iter().map(|v| v - lz).collect()
}

pub const RMS_EPS: f64 = 1e-6;

/// `x / rms(x) * gain`.
pub fn rms_norm(x: &[f64], gain: &[f64]) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    // an overflowed mean square must poison the output, not zero it
    let inv = if ms.is_finite() {
        1.0 / (ms + RMS_EPS).sqrt()
    } else {
        f64::NAN
    };
    x.iter().zip(gain).map(|(v, g)| v * inv * g).collect()
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v > x[best] {
            best = i;
        }
    }
    best
}

/// Rounds half up: `floor(x + 0.5)`.
#[inline]
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rank_examples() {
        assert_eq!(rank_descending(&[0.5, 0.9, 0.1]).unwrap(), vec![1, 0, 2]);
        assert_eq!(rank_descending(&[0.3, 0.3, 0.3]).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn rank_rejects_nan() {
        assert!(rank_descending(&[0.1, f64::NAN]).is_err());
    }

    #[test]
    fn rank_matches_stable_sort_oracle() {
        let mut g = SplitMix64::new(8);
        // coarse values so ties actually occur
        let s: Vec<f64> = (0..32).map(|_| (g.next_f64() * 8.0).floor()).collect();
        let mut oracle: Vec<usize> = (0..32).collect();
        // stable sort keeps ascending index among equals
        oracle.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap());
        assert_eq!(rank_descending(&s).unwrap(), oracle);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, 1001.0, 999.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
        let lp = log_softmax(&[1000.0, 1001.0, 999.0]);
        for (a, b) in p.iter().zip(&lp) {
            assert!((a.ln() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rms_and_silu() {
        let y = rms_norm(&[3.0, 4.0], &[1.0, 2.0]);
        let rms = (12.5f64 + RMS_EPS).sqrt();
        assert!((y[0] - 3.0 / rms).abs() < 1e-15);
        assert!((y[1] - 8.0 / rms).abs() < 1e-15);
        assert_eq!(silu(0.0), 0.0);
        assert!((silu(1.0) - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn rms_overflow_is_not_finite() {
        assert!(rms_norm(&[1e300, 1.0], &[1.0, 1.0]).iter().all(|v| v.is_nan()));
    }

    #[test]
    fn argmax_lowest_on_tie() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    }

    #[test]
    fn round_half_up_rule() {
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(round_half_up(2.4999), 2);
        assert_eq!(round_half_up(0.0), 0);
    }

    #[test]
    fn index_set_ops() {
        let a = IndexSet::from_unsorted(vec![5, 1, 3, 1]);
        assert_eq!(a.as_slice(), &[1, 3, 5]);
        let b = IndexSet::from_unsorted(vec![2, 4]);
        assert!(a.is_disjoint(&b));
        assert_eq!(a.union(&b), IndexSet::all(6).iter().copied().filter(|&i| i > 0).collect());
        assert!(IndexSet::from_unsorted(vec![3]).is_subset(&a));
    }

    proptest! {
        #[test]
        fn rank_is_sorted_bijection(v in prop::collection::vec(-1e6f64..1e6, 0..64)) {
            let p = rank_descending(&v).unwrap();
            let mut seen = p.clone();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..v.len()).collect::<Vec<_>>());
            for w in p.windows(2) {
                prop_assert!(v[w[0]] >= v[w[1]]);
                if v[w[0]] == v[w[1]] {
                    prop_assert!(w[0] < w[1]);
                }
            }
        }

        #[test]
        fn top_k_is_rank_prefix(v in prop::collection::vec(0f64..4.0, 1..40), k in 0usize..40) {
            let k = k.min(v.len());
            let pool: Vec<usize> = (0..v.len()).collect();
            let top = top_k_of(&v, &pool, k).unwrap();
            let prefix = IndexSet::from_unsorted(rank_descending(&v).unwrap()[..k].to_vec());
            prop_assert_eq!(top, prefix);
        }
    }
}
