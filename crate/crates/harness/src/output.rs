//! trace.csv, metrics.json and partition.json.
//!
//! Files are rendered in memory and renamed into place, so a reader never
//! sees a partial file and reruns produce identical bytes.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Serialize;

use prunesim_core::metrics::{FidelityReport, FlopsReport, RankDynamics};
use prunesim_core::model::ScoreDigest;
use prunesim_core::numerics::IndexSet;
use prunesim_core::pruning::{Mode, Partition, PartitionCounts};

use crate::runner::RunOutcome;
use crate::spec::Emit;
use crate::{HarnessError, Result};

pub const TRACE_HEADER: [&str; 9] = [
    "step",
    "layer",
    "active_count",
    "budget",
    "token",
    "kl",
    "top1_agree",
    "mean_rank_diff",
    "top_half_overlap",
];
pub const METRICS_FORMAT: &str = "prunesim-metrics-v1";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub layer: usize,
    pub active_count: usize,
    pub budget: usize,
    pub token: u32,
    pub kl: Option<f64>,
    pub top1_agree: Option<u8>,
    pub mean_rank_diff: Option<f64>,
    pub top_half_overlap: Option<f64>,
}

/// One row per decode step and layer. Fails if any row's active count
/// differs from the budget.
pub fn trace_rows(out: &RunOutcome, emit: &BTreeSet<Emit>) -> Result<Vec<TraceRow>> {
    let fid = emit.contains(&Emit::Fidelity).then_some(&out.fidelity);
    let rank = if emit.contains(&Emit::RankDynamics) {
        out.rank_dynamics.as_deref()
    } else {
        None
    };
    let mut rows = Vec::new();
    for (t, s) in out.pruned.steps.iter().enumerate() {
        for (l, ls) in s.layers.iter().enumerate() {
            let row = TraceRow {
                step: s.step,
                layer: l,
                active_count: ls.active.len(),
                budget: out.counts.budget,
                token: s.chosen,
                kl: fid.map(|f| f.kl[t]),
                top1_agree: fid.map(|f| f.top1_agree[t] as u8),
                mean_rank_diff: rank.map(|r| r[l].mean_rank_diff[t]),
                top_half_overlap: rank.map(|r| r[l].top_half_overlap[t]),
            };
            if row.active_count != row.budget {
                return Err(HarnessError::Invariant(format!(
                    "step {} layer {l}: {} active channels, budget {}",
                    s.step, row.active_count, row.budget
                )));
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn trace_csv(rows: &[TraceRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(TRACE_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| HarnessError::io("trace.csv", e.into_error()))
}

#[derive(Debug, Serialize)]
pub struct Metrics<'a> {
    pub format: &'static str,
    pub mode: Mode,
    pub ffn_ratio: f64,
    pub gamma: f64,
    pub random_seed: u64,
    pub counts: PartitionCounts,
    pub prompt_len: usize,
    pub n_generate: usize,
    pub dense_tokens: Vec<u32>,
    pub tokens: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flops: Option<&'a FlopsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<&'a FidelityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_dynamics: Option<&'a [RankDynamics]>,
}

pub fn metrics<'a>(out: &'a RunOutcome, emit: &BTreeSet<Emit>) -> Metrics<'a> {
    Metrics {
        format: METRICS_FORMAT,
        mode: out.pruning.mode,
        ffn_ratio: out.pruning.ffn_ratio,
        gamma: out.pruning.gamma,
        random_seed: out.pruning.random_seed,
        counts: out.counts,
        prompt_len: out.dense.prompt.len(),
        n_generate: out.dense.steps.len(),
        dense_tokens: out.dense.tokens(),
        tokens: out.pruned.tokens(),
        flops: emit.contains(&Emit::Flops).then_some(&out.flops),
        fidelity: emit.contains(&Emit::Fidelity).then_some(&out.fidelity),
        rank_dynamics: if emit.contains(&Emit::RankDynamics) {
            out.rank_dynamics.as_deref()
        } else {
            None
        },
    }
}

#[derive(Debug, Serialize)]
struct LayerActive<'a> {
    active: &'a IndexSet,
    #[serde(skip_serializing_if = "Option::is_none")]
    digest: Option<ScoreDigest>,
}

#[derive(Debug, Serialize)]
struct StepActive<'a> {
    step: usize,
    layers: Vec<LayerActive<'a>>,
}

#[derive(Debug, Serialize)]
struct PartitionDoc<'a> {
    mode: Mode,
    counts: PartitionCounts,
    #[serde(skip_serializing_if = "Option::is_none")]
    partitions: Option<&'a [Partition]>,
    prefill_active: &'a [IndexSet],
    steps: Vec<StepActive<'a>>,
}

pub fn partition_json(out: &RunOutcome) -> Result<Vec<u8>> {
    let doc = PartitionDoc {
        mode: out.pruning.mode,
        counts: out.counts,
        partitions: out.partitions.as_deref(),
        prefill_active: &out.pruned.prefill_active,
        steps: out
            .pruned
            .steps
            .iter()
            .map(|s| StepActive {
                step: s.step,
                layers: s
                    .layers
                    .iter()
                    .map(|l| LayerActive {
                        active: &l.active,
                        digest: l.digest,
                    })
                    .collect(),
            })
            .collect(),
    };
    Ok(to_json(&doc)?)
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| HarnessError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

/// Writes every requested artifact into `dir` and returns the paths.
pub fn write_run(out: &RunOutcome, emit: &BTreeSet<Emit>, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    // render everything before touching the directory so a failed invariant
    // leaves no partial set behind
    let mut files = Vec::new();
    if emit.contains(&Emit::Trace) {
        files.push(("trace.csv", trace_csv(&trace_rows(out, emit)?)?));
    }
    files.push(("metrics.json", to_json(&metrics(out, emit))?));
    if emit.contains(&Emit::Partition) {
        files.push(("partition.json", partition_json(out)?));
    }
    let mut written = Vec::new();
    for (name, bytes) in files {
        let p = dir.join(name);
        write_atomic(&p, &bytes)?;
        written.push(p);
    }
    Ok(written)
}
