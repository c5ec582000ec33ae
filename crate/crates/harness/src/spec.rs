//! Experiment spec files (`prunesim-spec-v1`).
//!
//! ```json
//! {
//!   "version": "prunesim-spec-v1",
//!   "model": {"config": {"d_model": 64, "d_ff": 256, "n_layers": 4, "n_heads": 4,
//!                        "n_kv_heads": 2, "vocab": 256, "max_seq": 128, "seed": 1}},
//!   "pruning": {"mode": "pop", "ffn_ratio": 0.4, "gamma": 0.1, "random_seed": 0},
//!   "prompt": {"synthetic": {"seed": 7, "length": 32}},
//!   "n_generate": 64,
//!   "emit": ["trace", "partition", "flops", "fidelity", "rank_dynamics"]
//! }
//! ```
//!
//! `model` may instead be `{"checkpoint": "path/to/file.ckpt"}` and `prompt`
//! `{"tokens": [1, 2, 3]}`. `pruning` takes either `ffn_ratio` (fraction of
//! FFN channels off per step) or `target_pr` (whole-model ratio, converted to
//! an FFN ratio with attention kept dense).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use prunesim_core::model::{Checkpoint, ModelConfig};
use prunesim_core::numerics::SplitMix64;
use prunesim_core::pruning::{ffn_pruning_ratio, AttnFfnDims, Mode, PruningConfig};

use crate::{HarnessError, Result};

pub const SPEC_VERSION: &str = "prunesim-spec-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    Config(ModelConfig),
    Checkpoint(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PromptSpec {
    Tokens(Vec<u32>),
    Synthetic { seed: u64, length: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruningSpec {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ffn_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_pr: Option<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub random_seed: u64,
}

fn default_gamma() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emit {
    Trace,
    Partition,
    Flops,
    Fidelity,
    RankDynamics,
}

impl Emit {
    pub const ALL: [Emit; 5] = [
        Emit::Trace,
        Emit::Partition,
        Emit::Flops,
        Emit::Fidelity,
        Emit::RankDynamics,
    ];
}

fn default_emit() -> BTreeSet<Emit> {
    Emit::ALL.into_iter().collect()
}

fn default_seeds() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub version: String,
    pub model: ModelSource,
    pub pruning: PruningSpec,
    pub prompt: PromptSpec,
    pub n_generate: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<PathBuf>,
    #[serde(default = "default_emit")]
    pub emit: BTreeSet<Emit>,
    /// `(ffn_ratio, gamma)` pairs for `sweep`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<(f64, f64)>,
    /// Modes for `compare`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modes: Vec<Mode>,
    /// Replicates for `sweep` / `compare`; replicate `i` shifts the model
    /// seed and the synthetic prompt seed by `i`.
    #[serde(default = "default_seeds")]
    pub seeds: usize,
}

/// Everything needed to run one experiment.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub ckpt: Checkpoint,
    pub pruning: PruningConfig,
    pub prompt: Vec<u32>,
    pub n_generate: usize,
    pub emit: BTreeSet<Emit>,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        if spec.version != SPEC_VERSION {
            return Err(HarnessError::Config(format!(
                "spec version {:?}, expected {SPEC_VERSION:?}",
                spec.version
            )));
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text)
    }

    /// A spec for the toy model; used by tests and as a template.
    pub fn toy(mode: Mode, ffn_ratio: f64, gamma: f64) -> Self {
        Self {
            version: SPEC_VERSION.into(),
            model: ModelSource::Config(ModelConfig::toy(1)),
            pruning: PruningSpec {
                mode,
                ffn_ratio: Some(ffn_ratio),
                target_pr: None,
                gamma,
                random_seed: 0,
            },
            prompt: PromptSpec::Synthetic { seed: 7, length: 32 },
            n_generate: 64,
            outputs: None,
            emit: default_emit(),
            sweep: Vec::new(),
            modes: Vec::new(),
            seeds: 1,
        }
    }

    /// Copy with model and prompt seeds shifted for replicate `i`.
    pub fn replicate(&self, i: usize) -> Self {
        let mut s = self.clone();
        if let ModelSource::Config(c) = &mut s.model {
            c.seed = c.seed.wrapping_add(i as u64);
        }
        if let PromptSpec::Synthetic { seed, .. } = &mut s.prompt {
            *seed = seed.wrapping_add(i as u64);
        }
        s.pruning.random_seed = s.pruning.random_seed.wrapping_add(i as u64);
        s
    }

    pub fn load_checkpoint(&self) -> Result<Checkpoint> {
        Ok(match &self.model {
            ModelSource::Config(c) => Checkpoint::init(*c)?,
            ModelSource::Checkpoint(p) => Checkpoint::load(p)?,
        })
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let ckpt = self.load_checkpoint()?;
        self.resolve_with(ckpt)
    }

    pub fn resolve_with(&self, ckpt: Checkpoint) -> Result<Resolved> {
        let cfg = ckpt.config;
        let pruning = self.pruning_config(&cfg)?;
        let prompt = match &self.prompt {
            PromptSpec::Tokens(t) => t.clone(),
            PromptSpec::Synthetic { seed, length } => synthetic_prompt(*seed, *length, cfg.vocab),
        };
        if prompt.is_empty() {
            return Err(HarnessError::Config("prompt is empty".into()));
        }
        if let Some(&t) = prompt.iter().find(|&&t| t as usize >= cfg.vocab) {
            return Err(HarnessError::Config(format!("prompt token {t} outside vocab {}", cfg.vocab)));
        }
        if self.n_generate == 0 {
            return Err(HarnessError::Config("n_generate must be at least 1".into()));
        }
        if prompt.len() + self.n_generate > cfg.max_seq {
            return Err(HarnessError::Config(format!(
                "prompt length {} + n_generate {} exceeds max_seq {}",
                prompt.len(),
                self.n_generate,
                cfg.max_seq
            )));
        }
        Ok(Resolved {
            ckpt,
            pruning,
            prompt,
            n_generate: self.n_generate,
            emit: self.emit.clone(),
        })
    }

    pub fn pruning_config(&self, model: &ModelConfig) -> Result<PruningConfig> {
        let p = &self.pruning;
        let ffn_ratio = match (p.ffn_ratio, p.target_pr) {
            (Some(_), Some(_)) => {
                return Err(HarnessError::Config("give either ffn_ratio or target_pr, not both".into()))
            }
            (Some(r), None) => r,
            (None, Some(t)) => ffn_pruning_ratio(t, &AttnFfnDims::from(model))?,
            (None, None) if p.mode == Mode::Dense => 0.0,
            (None, None) => return Err(HarnessError::Config("pruning needs ffn_ratio or target_pr".into())),
        };
        let cfg = PruningConfig {
            ffn_ratio,
            gamma: p.gamma,
            mode: p.mode,
            random_seed: p.random_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Uniform tokens from the SplitMix64 stream of `seed`.
pub fn synthetic_prompt(seed: u64, length: usize, vocab: usize) -> Vec<u32> {
    let mut g = SplitMix64::new(seed);
    (0..length).map(|_| g.next_below(vocab as u64) as u32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_example() {
        let text = r#"{
          "version": "prunesim-spec-v1",
          "model": {"config": {"d_model": 64, "d_ff": 256, "n_layers": 4, "n_heads": 4,
                               "n_kv_heads": 2, "vocab": 256, "max_seq": 128, "seed": 1}},
          "pruning": {"mode": "pop", "ffn_ratio": 0.4, "gamma": 0.1, "random_seed": 0},
          "prompt": {"synthetic": {"seed": 7, "length": 32}},
          "n_generate": 64,
          "emit": ["trace", "partition", "flops", "fidelity", "rank_dynamics"]
        }"#;
        let s = ExperimentSpec::from_json(text).unwrap();
        assert_eq!(s, ExperimentSpec::toy(Mode::Pop, 0.4, 0.1));
    }

    #[test]
    fn rejects_wrong_version_and_unknown_fields() {
        let mut v = serde_json::to_value(ExperimentSpec::toy(Mode::Pop, 0.4, 0.1)).unwrap();
        v["version"] = "prunesim-spec-v2".into();
        assert!(ExperimentSpec::from_json(&v.to_string()).is_err());
        let mut v = serde_json::to_value(ExperimentSpec::toy(Mode::Pop, 0.4, 0.1)).unwrap();
        v["bogus"] = 1.into();
        assert!(ExperimentSpec::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn target_pr_converts_through_attention_share() {
        let mut s = ExperimentSpec::toy(Mode::Pop, 0.0, 0.1);
        s.pruning.ffn_ratio = None;
        s.pruning.target_pr = Some(0.2);
        let r = s.resolve().unwrap().pruning.ffn_ratio;
        // toy block: attention 64 * (128 + 64), FFN 3 * 64 * 256
        assert!((r - 0.2 * (12288.0 + 49152.0) / 49152.0).abs() < 1e-12);
        s.pruning.ffn_ratio = Some(0.3);
        assert!(matches!(s.resolve(), Err(HarnessError::Config(_))));
    }

    #[test]
    fn length_limits() {
        let mut s = ExperimentSpec::toy(Mode::Pop, 0.4, 0.1);
        s.n_generate = 97;
        assert!(s.resolve().is_err());
        s.n_generate = 0;
        assert!(s.resolve().is_err());
        s.n_generate = 1;
        s.prompt = PromptSpec::Tokens(vec![300]);
        assert!(s.resolve().is_err());
    }

    #[test]
    fn replicate_shifts_seeds() {
        let s = ExperimentSpec::toy(Mode::Pop, 0.4, 0.1).replicate(3);
        assert_eq!(s.model, ModelSource::Config(ModelConfig::toy(4)));
        assert_eq!(s.prompt, PromptSpec::Synthetic { seed: 10, length: 32 });
    }
}
