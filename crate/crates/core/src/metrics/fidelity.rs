use serde::{Deserialize, Serialize};

use crate::numerics::{argmax, log_softmax};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    /// `KL(dense || pruned)` of the next-token distribution, per step.
    pub kl: Vec<f64>,
    pub mean_kl: f64,
    /// Per step: does the pruned argmax match the dense argmax.
    pub top1_agree: Vec<bool>,
    pub top1_agreement: f64,
}

/// `KL(softmax(p) || softmax(q))` in nats, clamped at zero.
pub fn kl_from_logits(p: &[f64], q: &[f64]) -> f64 {
    let lp = log_softmax(p);
    let lq = log_softmax(q);
    let kl: f64 = lp
        .iter()
        .zip(&lq)
        .map(|(a, b)| a.exp() * (a - b))
        .sum();
    kl.max(0.0)
}

pub fn fidelity<A: AsRef<[f64]>, B: AsRef<[f64]>>(dense: &[A], pruned: &[B]) -> Result<FidelityReport> {
    if dense.len() != pruned.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} dense steps vs {} pruned steps",
            dense.len(),
            pruned.len()
        )));
    }
    let mut kl = Vec::with_capacity(dense.len());
    let mut agree = Vec::with_capacity(dense.len());
    for (d, p) in dense.iter().zip(pruned) {
        let (d, p) = (d.as_ref(), p.as_ref());
        if d.len() != p.len() {
            return Err(Error::DimensionMismatch("logit widths differ".into()));
        }
        kl.push(kl_from_logits(d, p));
        agree.push(argmax(d) == argmax(p));
    }
    let n = dense.len().max(1) as f64;
    Ok(FidelityReport {
        mean_kl: kl.iter().sum::<f64>() / n,
        top1_agreement: if dense.is_empty() {
            1.0
        } else {
            agree.iter().filter(|&&a| a).count() as f64 / n
        },
        kl,
        top1_agree: agree,
    })
}
