//! Batched evaluation over pruning configurations and seed replicates.

use rayon::prelude::*;
use serde::Serialize;

use prunesim_core::metrics::ffn_flops;
use prunesim_core::model::Generation;
use prunesim_core::pruning::{Controller, Mode, PruningConfig};

use crate::runner::{dense_reference, pruned_against};
use crate::spec::{ExperimentSpec, Resolved};
use crate::{HarnessError, Result};

pub const THREADS_ENV: &str = "PRUNESIM_THREADS";

pub const SUMMARY_HEADER: [&str; 14] = [
    "mode",
    "ffn_ratio",
    "gamma",
    "retained",
    "candidate",
    "pruned",
    "budget",
    "seeds",
    "mean_kl",
    "top1_agreement",
    "dense_ffn_macs",
    "ideal_pruned_ffn_macs",
    "method_ffn_macs",
    "overhead_pct",
];

/// One configuration averaged over replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub mode: Mode,
    pub ffn_ratio: f64,
    pub gamma: f64,
    pub retained: usize,
    pub candidate: usize,
    pub pruned: usize,
    pub budget: usize,
    pub seeds: usize,
    pub mean_kl: f64,
    pub top1_agreement: f64,
    pub dense_ffn_macs: u64,
    pub ideal_pruned_ffn_macs: u64,
    pub method_ffn_macs: u64,
    pub overhead_pct: f64,
}

/// Thread pool sized by `PRUNESIM_THREADS`; unset or 0 uses rayon's default.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| HarnessError::Config(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))
}

/// Evaluates every configuration on `spec.seeds` replicates. Rows come back
/// in the order of `configs` whatever the thread count.
pub fn evaluate(spec: &ExperimentSpec, configs: &[PruningConfig]) -> Result<Vec<SummaryRow>> {
    if spec.seeds == 0 {
        return Err(HarnessError::Config("seeds must be at least 1".into()));
    }
    for c in configs {
        c.validate()?;
    }
    let pool = thread_pool()?;
    pool.install(|| {
        let bases: Vec<(Resolved, Generation)> = (0..spec.seeds)
            .into_par_iter()
            .map(|i| {
                let r = spec.replicate(i).resolve()?;
                let dense = dense_reference(&r.ckpt, &r.prompt, r.n_generate)?;
                Ok((r, dense))
            })
            .collect::<Result<_>>()?;

        let jobs: Vec<(usize, usize)> = (0..configs.len())
            .flat_map(|c| (0..bases.len()).map(move |s| (c, s)))
            .collect();
        let fids: Vec<(f64, f64)> = jobs
            .par_iter()
            .map(|&(c, s)| {
                let (r, dense) = &bases[s];
                let mut cfg = configs[c];
                cfg.random_seed = cfg.random_seed.wrapping_add(s as u64);
                let (_, _, f) = pruned_against(&r.ckpt, cfg, dense)?;
                Ok((f.mean_kl, f.top1_agreement))
            })
            .collect::<Result<_>>()?;

        let model = bases[0].0.ckpt.config;
        configs
            .iter()
            .enumerate()
            .map(|(c, cfg)| {
                let per = &fids[c * bases.len()..(c + 1) * bases.len()];
                let n = per.len() as f64;
                let counts = Controller::counts(cfg, model.d_ff)?;
                let fl = ffn_flops(&model, cfg.mode, &counts, spec.n_generate);
                Ok(SummaryRow {
                    mode: cfg.mode,
                    ffn_ratio: cfg.ffn_ratio,
                    gamma: cfg.gamma,
                    retained: counts.retained,
                    candidate: counts.candidate,
                    pruned: counts.pruned,
                    budget: counts.budget,
                    seeds: per.len(),
                    mean_kl: per.iter().map(|p| p.0).sum::<f64>() / n,
                    top1_agreement: per.iter().map(|p| p.1).sum::<f64>() / n,
                    dense_ffn_macs: fl.dense_ffn_macs,
                    ideal_pruned_ffn_macs: fl.ideal_pruned_ffn_macs,
                    method_ffn_macs: fl.method_ffn_macs,
                    overhead_pct: fl.overhead_pct,
                })
            })
            .collect()
    })
}

/// The spec's mode at every `(ffn_ratio, gamma)` pair.
pub fn sweep(spec: &ExperimentSpec, pairs: &[(f64, f64)]) -> Result<Vec<SummaryRow>> {
    if pairs.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one (ffn_ratio, gamma) pair".into()));
    }
    let base = base_config(spec)?;
    let configs: Vec<_> = pairs
        .iter()
        .map(|&(r, g)| PruningConfig {
            ffn_ratio: r,
            gamma: g,
            ..base
        })
        .collect();
    evaluate(spec, &configs)
}

/// Every mode in `modes` at the spec's ratio and gamma.
pub fn compare(spec: &ExperimentSpec, modes: &[Mode]) -> Result<Vec<SummaryRow>> {
    if modes.is_empty() {
        return Err(HarnessError::Config("compare needs at least one mode".into()));
    }
    let mut base = base_config(spec)?;
    if base.mode == Mode::Dense && spec.pruning.ffn_ratio.is_none() && spec.pruning.target_pr.is_none() {
        return Err(HarnessError::Config("compare needs ffn_ratio or target_pr".into()));
    }
    base.mode = Mode::Dense;
    let configs: Vec<_> = modes.iter().map(|&mode| PruningConfig { mode, ..base }).collect();
    evaluate(spec, &configs)
}

fn base_config(spec: &ExperimentSpec) -> Result<PruningConfig> {
    let model = spec.load_checkpoint()?.config;
    spec.pruning_config(&model)
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| HarnessError::io("summary.csv", e.into_error()))
}
