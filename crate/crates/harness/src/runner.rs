//! One experiment: a dense reference run, then the configured controller
//! teacher-forced on the dense tokens so both see identical contexts.

use prunesim_core::metrics::{ffn_flops, fidelity, rank_dynamics, FidelityReport, FlopsReport, RankDynamics};
use prunesim_core::model::{generate, Checkpoint, DenseController, Generation};
use prunesim_core::pruning::{Controller, FullReevalController, Mode, Partition, PartitionCounts, PruningConfig};

use crate::spec::{Emit, Resolved};
use crate::Result;

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub pruning: PruningConfig,
    pub counts: PartitionCounts,
    pub dense: Generation,
    pub pruned: Generation,
    pub fidelity: FidelityReport,
    pub flops: FlopsReport,
    /// Prefill partitions; only POP has them.
    pub partitions: Option<Vec<Partition>>,
    pub rank_dynamics: Option<Vec<RankDynamics>>,
}

pub fn dense_reference(ckpt: &Checkpoint, prompt: &[u32], n_generate: usize) -> Result<Generation> {
    let mut ctl = DenseController::new(ckpt.config.d_ff);
    Ok(generate(ckpt, prompt, n_generate, &mut ctl, None)?)
}

/// Runs `cfg` teacher-forced on `dense` and scores it against `dense`.
pub fn pruned_against(
    ckpt: &Checkpoint,
    cfg: PruningConfig,
    dense: &Generation,
) -> Result<(Generation, Controller, FidelityReport)> {
    let n = dense.steps.len();
    let forced = dense.tokens();
    let mut ctl = Controller::new(cfg, ckpt)?;
    let pruned = generate(ckpt, &dense.prompt, n, &mut ctl, Some(&forced))?;
    let fid = fidelity(&dense.step_logits(), &pruned.step_logits())?;
    Ok((pruned, ctl, fid))
}

/// Per-layer drift of full-width channel rankings away from the prefill
/// ranking, measured on a full re-evaluation pass over the dense tokens.
pub fn rank_dynamics_pass(ckpt: &Checkpoint, cfg: PruningConfig, dense: &Generation) -> Result<Vec<RankDynamics>> {
    let diag = PruningConfig {
        mode: Mode::FullReeval,
        ..cfg
    };
    let mut ctl = FullReevalController::new(diag, ckpt)?;
    let forced = dense.tokens();
    generate(ckpt, &dense.prompt, dense.steps.len(), &mut ctl, Some(&forced))?;
    (0..ckpt.config.n_layers)
        .map(|l| {
            let prefill = ctl
                .prefill_scores(l)
                .expect("prefill ran for every layer")
                .values
                .clone();
            let steps: Vec<Vec<f64>> = ctl.step_scores(l).iter().map(|s| s.values.clone()).collect();
            Ok(rank_dynamics(l, &prefill, &steps)?)
        })
        .collect()
}

pub fn run(resolved: &Resolved) -> Result<RunOutcome> {
    let ckpt = &resolved.ckpt;
    let cfg = resolved.pruning;
    let counts = Controller::counts(&cfg, ckpt.config.d_ff)?;
    let dense = dense_reference(ckpt, &resolved.prompt, resolved.n_generate)?;
    let (pruned, ctl, fid) = pruned_against(ckpt, cfg, &dense)?;
    let partitions = match &ctl {
        Controller::Pop(p) => Some(p.partitions()),
        _ => None,
    };
    let rank = if resolved.emit.contains(&Emit::RankDynamics) {
        Some(rank_dynamics_pass(ckpt, cfg, &dense)?)
    } else {
        None
    };
    Ok(RunOutcome {
        pruning: cfg,
        counts,
        flops: ffn_flops(&ckpt.config, cfg.mode, &counts, resolved.n_generate),
        dense,
        pruned,
        fidelity: fid,
        partitions,
        rank_dynamics: rank,
    })
}
