use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use prunesim::output::{write_atomic, write_run};
use prunesim::sweep::summary_csv;
use prunesim::{compare, run, sweep, ExperimentSpec, HarnessError, ModelSource, Result};
use prunesim_core::model::{Checkpoint, ModelConfig};
use prunesim_core::pruning::{ffn_pruning_ratio, preset, AttnFfnDims, Mode};

#[derive(Parser)]
#[command(name = "prunesim", version, about = "Activation-guided FFN pruning simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Dense reference plus one pruned run; writes trace.csv, metrics.json, partition.json.
    Run {
        #[command(flatten)]
        over: Overrides,
        /// Output directory (default: the spec's `outputs`, else ./out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// FFN pruning ratio that yields a whole-model pruning ratio.
    Ratio {
        #[arg(long)]
        pr: f64,
        #[arg(long, conflicts_with_all = ["d_model", "d_ff", "n_heads", "n_kv_heads", "head_dim"])]
        preset: Option<String>,
        #[arg(long, requires_all = ["d_ff", "n_heads", "n_kv_heads", "head_dim"])]
        d_model: Option<usize>,
        #[arg(long)]
        d_ff: Option<usize>,
        #[arg(long)]
        n_heads: Option<usize>,
        #[arg(long)]
        n_kv_heads: Option<usize>,
        #[arg(long)]
        head_dim: Option<usize>,
    },
    /// The spec's mode over (ffn_ratio, gamma) pairs; CSV to --out or stdout.
    Sweep {
        #[command(flatten)]
        over: Overrides,
        /// Comma-separated `ratio:gamma` pairs, replacing the spec's `sweep`.
        #[arg(long)]
        pairs: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Several modes at the spec's ratio; CSV to --out or stdout.
    Compare {
        #[command(flatten)]
        over: Overrides,
        /// Comma-separated modes, replacing the spec's `modes`.
        #[arg(long)]
        modes: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Checkpoint utilities.
    Ckpt {
        #[command(subcommand)]
        cmd: CkptCmd,
    },
}

#[derive(Subcommand)]
enum CkptCmd {
    /// Write a seeded checkpoint (toy config unless --spec gives one).
    Init {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the header and sizes.
    Info { path: PathBuf },
    /// Print per-tensor shape and value range.
    Dump { path: PathBuf },
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    spec: PathBuf,
    /// Model seed; only valid when the spec builds the model from a config.
    #[arg(long)]
    seed: Option<u64>,
    /// Whole-model pruning ratio, converted to an FFN ratio.
    #[arg(long, conflicts_with = "ffn_ratio")]
    pr: Option<f64>,
    /// FFN channel pruning ratio.
    #[arg(long)]
    ffn_ratio: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    mode: Option<Mode>,
}

impl Overrides {
    fn load(&self) -> Result<ExperimentSpec> {
        let mut spec = ExperimentSpec::load(&self.spec)?;
        if let Some(seed) = self.seed {
            match &mut spec.model {
                ModelSource::Config(c) => c.seed = seed,
                ModelSource::Checkpoint(_) => {
                    return Err(HarnessError::Config("--seed needs a config-sourced model".into()))
                }
            }
        }
        if let Some(pr) = self.pr {
            spec.pruning.target_pr = Some(pr);
            spec.pruning.ffn_ratio = None;
        }
        if let Some(r) = self.ffn_ratio {
            spec.pruning.ffn_ratio = Some(r);
            spec.pruning.target_pr = None;
        }
        if let Some(g) = self.gamma {
            spec.pruning.gamma = g;
        }
        if let Some(m) = self.mode {
            spec.pruning.mode = m;
        }
        Ok(spec)
    }
}

fn parse_pairs(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(',')
        .map(|p| {
            let (r, g) = p
                .split_once(':')
                .ok_or_else(|| HarnessError::Config(format!("pair {p:?} is not ratio:gamma")))?;
            let num = |x: &str| {
                x.trim()
                    .parse::<f64>()
                    .map_err(|_| HarnessError::Config(format!("{x:?} is not a number")))
            };
            Ok((num(r)?, num(g)?))
        })
        .collect()
}

fn parse_modes(s: &str) -> Result<Vec<Mode>> {
    s.split(',')
        .map(|m| m.trim().parse::<Mode>().map_err(|e| HarnessError::Config(e.to_string())))
        .collect()
}

fn emit_csv(bytes: &[u8], out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, bytes),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| HarnessError::io("<stdout>", e)),
    }
}

fn main_inner(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run { over, out } => {
            let spec = over.load()?;
            let dir = out
                .or_else(|| spec.outputs.clone())
                .unwrap_or_else(|| PathBuf::from("out"));
            let resolved = spec.resolve()?;
            let outcome = run(&resolved)?;
            for p in write_run(&outcome, &resolved.emit, &dir)? {
                println!("wrote {}", p.display());
            }
            println!(
                "mode={} ffn_ratio={} gamma={} budget={}/{} mean_kl={:.6e} top1={:.4} overhead_pct={:.3}",
                outcome.pruning.mode,
                outcome.pruning.ffn_ratio,
                outcome.pruning.gamma,
                outcome.counts.budget,
                outcome.counts.d_ff,
                outcome.fidelity.mean_kl,
                outcome.fidelity.top1_agreement,
                outcome.flops.overhead_pct
            );
        }
        Cmd::Ratio {
            pr,
            preset: name,
            d_model,
            d_ff,
            n_heads,
            n_kv_heads,
            head_dim,
        } => {
            let dims = match (name, d_model) {
                (Some(n), _) => preset(&n).ok_or_else(|| HarnessError::Config(format!("unknown preset {n:?}")))?,
                (None, Some(d_model)) => AttnFfnDims {
                    d_model,
                    d_ff: d_ff.unwrap_or_default(),
                    n_heads: n_heads.unwrap_or_default(),
                    n_kv_heads: n_kv_heads.unwrap_or_default(),
                    head_dim: head_dim.unwrap_or_default(),
                },
                (None, None) => return Err(HarnessError::Config("give --preset or explicit dimensions".into())),
            };
            println!("{:.3}", ffn_pruning_ratio(pr, &dims)?);
        }
        Cmd::Sweep { over, pairs, out } => {
            let spec = over.load()?;
            let pairs = match pairs {
                Some(p) => parse_pairs(&p)?,
                None => spec.sweep.clone(),
            };
            emit_csv(&summary_csv(&sweep(&spec, &pairs)?)?, out.as_deref())?;
        }
        Cmd::Compare { over, modes, out } => {
            let spec = over.load()?;
            let modes = match modes {
                Some(m) => parse_modes(&m)?,
                None if spec.modes.is_empty() => Mode::ALL.to_vec(),
                None => spec.modes.clone(),
            };
            emit_csv(&summary_csv(&compare(&spec, &modes)?)?, out.as_deref())?;
        }
        Cmd::Ckpt { cmd } => ckpt(cmd)?,
    }
    Ok(())
}

fn ckpt(cmd: CkptCmd) -> Result<()> {
    match cmd {
        CkptCmd::Init { out, spec, seed } => {
            let mut config = match spec {
                Some(p) => match ExperimentSpec::load(&p)?.model {
                    ModelSource::Config(c) => c,
                    ModelSource::Checkpoint(_) => {
                        return Err(HarnessError::Config("spec model is already a checkpoint".into()))
                    }
                },
                None => ModelConfig::toy(0),
            };
            if let Some(s) = seed {
                config.seed = s;
            }
            let bytes = Checkpoint::init(config)?.to_bytes()?;
            write_atomic(&out, &bytes)?;
            println!("wrote {} ({} bytes)", out.display(), bytes.len());
        }
        CkptCmd::Info { path } => {
            let ck = Checkpoint::load(&path)?;
            let params: usize = ck.tensors().iter().map(|t| t.1 * t.2).sum();
            println!("{}", ck.header_line()?);
            println!("tensors={} params={}", ck.tensors().len(), params);
        }
        CkptCmd::Dump { path } => {
            let ck = Checkpoint::load(&path)?;
            let mut text = String::from("name,rows,cols,min,max,mean\n");
            for (name, rows, cols, data) in ck.tensors() {
                let min = data.iter().copied().fold(f64::INFINITY, f64::min);
                let max = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mean = data.iter().sum::<f64>() / data.len().max(1) as f64;
                text.push_str(&format!("{name},{rows},{cols},{min},{max},{mean}\n"));
            }
            emit_csv(text.as_bytes(), None)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("prunesim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
