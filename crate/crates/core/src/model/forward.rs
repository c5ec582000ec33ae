use serde::{Deserialize, Serialize};

use super::{Checkpoint, FfnController, FfnTap, KvCache, ScoreDigest, Stage};
use crate::numerics::{argmax, masked_matvec, matvec, matvec_rows, rms_norm, silu, softmax, IndexSet, Matrix};
use crate::{Error, Result};

/// Result of the prompt pass.
#[derive(Debug, Clone)]
pub struct Prefill {
    /// Logits at the last prompt position.
    pub logits: Vec<f64>,
    pub cache: KvCache,
    pub taps: Vec<FfnTap>,
    /// Down-projection channel set per layer.
    pub active: Vec<IndexSet>,
}

/// What one layer's FFN did at one decode step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStep {
    pub computed: IndexSet,
    pub active: IndexSet,
    pub digest: Option<ScoreDigest>,
}

#[derive(Debug, Clone)]
pub struct Decoded {
    pub logits: Vec<f64>,
    pub taps: Vec<FfnTap>,
    pub layers: Vec<LayerStep>,
}

fn check_token(ckpt: &Checkpoint, token: u32) -> Result<()> {
    if token as usize >= ckpt.config.vocab {
        return Err(Error::TokenOutOfRange {
            token,
            vocab: ckpt.config.vocab,
        });
    }
    Ok(())
}

fn check_range(set: &IndexSet, d_ff: usize) -> Result<()> {
    match set.max() {
        Some(m) if m >= d_ff => Err(Error::IndexOutOfRange { index: m, len: d_ff }),
        _ => Ok(()),
    }
}

fn embed(ckpt: &Checkpoint, token: u32, pos: usize) -> Vec<f64> {
    ckpt.tok_embed
        .row(token as usize)
        .iter()
        .zip(ckpt.pos_embed.row(pos))
        .map(|(t, p)| t + p)
        .collect()
}

fn add_into(x: &mut [f64], y: &[f64]) {
    for (a, b) in x.iter_mut().zip(y) {
        *a += b;
    }
}

/// Pre-norm causal self-attention for the token at `pos`; appends its key and
/// value to the cache and attends over positions `0..=pos`.
fn attention(ckpt: &Checkpoint, layer: usize, cache: &mut KvCache, x: &mut [f64], pos: usize) -> Result<()> {
    let cfg = &ckpt.config;
    let w = &ckpt.layers[layer];
    let xn = rms_norm(x, &w.attn_norm);
    let q = matvec(&w.wq, &xn)?;
    let k = matvec(&w.wk, &xn)?;
    let v = matvec(&w.wv, &xn)?;
    cache.push(layer, &k, &v);

    let hd = cfg.head_dim();
    let group = cfg.n_heads / cfg.n_kv_heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = vec![0.0; cfg.d_model];
    for h in 0..cfg.n_heads {
        let qh = &q[h * hd..(h + 1) * hd];
        let kv_off = (h / group) * hd;
        let scores: Vec<f64> = (0..=pos)
            .map(|j| {
                let kj = &cache.key(layer, j)[kv_off..kv_off + hd];
                qh.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale
            })
            .collect();
        let probs = softmax(&scores);
        let oh = &mut out[h * hd..(h + 1) * hd];
        for (j, p) in probs.iter().enumerate() {
            let vj = &cache.value(layer, j)[kv_off..kv_off + hd];
            for (o, vv) in oh.iter_mut().zip(vj) {
                *o += p * vv;
            }
        }
    }
    add_into(x, &matvec(&w.wo, &out)?);
    Ok(())
}

fn logits_of(ckpt: &Checkpoint, x: &[f64]) -> Result<Vec<f64>> {
    let xn = rms_norm(x, &ckpt.final_norm);
    let logits = matvec(&ckpt.tok_embed, &xn)?;
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    Ok(logits)
}

/// Processes the whole prompt, layer by layer. Each layer's full FFN
/// intermediate goes to the controller before the down-projection, so the
/// chosen mask already shapes the input of the next layer.
pub fn prefill(ckpt: &Checkpoint, tokens: &[u32], ctl: &mut dyn FfnController) -> Result<Prefill> {
    if tokens.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    for &t in tokens {
        check_token(ckpt, t)?;
    }
    let cfg = &ckpt.config;
    let mut cache = KvCache::new(cfg);
    cache.ensure_room(tokens.len())?;

    let mut xs: Vec<Vec<f64>> = tokens
        .iter()
        .enumerate()
        .map(|(p, &t)| embed(ckpt, t, p))
        .collect();
    let mut taps = Vec::with_capacity(cfg.n_layers);
    let mut active = Vec::with_capacity(cfg.n_layers);

    for (l, w) in ckpt.layers.iter().enumerate() {
        for (p, x) in xs.iter_mut().enumerate() {
            attention(ckpt, l, &mut cache, x, p)?;
        }
        let mut h = Matrix::zeros(xs.len(), cfg.d_ff);
        for (p, x) in xs.iter().enumerate() {
            let xn = rms_norm(x, &w.ffn_norm);
            let g = matvec(&w.gate, &xn)?;
            let u = matvec(&w.up, &xn)?;
            for (dst, (gi, ui)) in h.row_mut(p).iter_mut().zip(g.iter().zip(&u)) {
                *dst = silu(*gi) * ui;
            }
        }
        let tap = FfnTap {
            layer: l,
            stage: Stage::Prefill,
            values: h,
            computed: IndexSet::all(cfg.d_ff),
        };
        let keep = ctl.prefill_active(&tap)?;
        check_range(&keep, cfg.d_ff)?;
        for (p, x) in xs.iter_mut().enumerate() {
            add_into(x, &masked_matvec(&w.down, tap.values.row(p), &keep)?);
        }
        taps.push(tap);
        active.push(keep);
    }
    cache.advance(tokens.len());
    cache.mark_prompt();

    let logits = logits_of(ckpt, xs.last().expect("non-empty prompt"))?;
    Ok(Prefill {
        logits,
        cache,
        taps,
        active,
    })
}

/// One autoregressive step with the two-phase FFN. On error the cache is
/// left as it was before the call.
pub fn decode_step(
    ckpt: &Checkpoint,
    cache: &mut KvCache,
    token: u32,
    ctl: &mut dyn FfnController,
) -> Result<Decoded> {
    check_token(ckpt, token)?;
    cache.ensure_room(1)?;
    let out = decode_inner(ckpt, cache, token, ctl);
    match out {
        Ok(d) => {
            cache.advance(1);
            Ok(d)
        }
        Err(e) => {
            cache.rollback();
            Err(e)
        }
    }
}

fn decode_inner(
    ckpt: &Checkpoint,
    cache: &mut KvCache,
    token: u32,
    ctl: &mut dyn FfnController,
) -> Result<Decoded> {
    let cfg = &ckpt.config;
    let pos = cache.len();
    let step = pos - cache.prompt_len() + 1;
    let mut x = embed(ckpt, token, pos);
    let mut taps = Vec::with_capacity(cfg.n_layers);
    let mut layers = Vec::with_capacity(cfg.n_layers);

    for (l, w) in ckpt.layers.iter().enumerate() {
        attention(ckpt, l, cache, &mut x, pos)?;
        let xn = rms_norm(&x, &w.ffn_norm);

        let computed = ctl.decode_compute_set(l, step)?;
        check_range(&computed, cfg.d_ff)?;
        let g = matvec_rows(&w.gate, &xn, &computed)?;
        let u = matvec_rows(&w.up, &xn, &computed)?;
        let mut h = Matrix::zeros(1, cfg.d_ff);
        for &i in computed.iter() {
            h.set(0, i, silu(g[i]) * u[i]);
        }
        let tap = FfnTap {
            layer: l,
            stage: Stage::Decode(step),
            values: h,
            computed,
        };

        let active = ctl.decode_active(&tap)?;
        if !active.is_subset(&tap.computed) {
            return Err(Error::Controller(format!(
                "layer {l} step {step}: active set is not a subset of the computed set"
            )));
        }
        add_into(&mut x, &masked_matvec(&w.down, tap.values.row(0), &active)?);
        layers.push(LayerStep {
            computed: tap.computed.clone(),
            active,
            digest: ctl.last_digest(l),
        });
        taps.push(tap);
    }
    Ok(Decoded {
        logits: logits_of(ckpt, &x)?,
        taps,
        layers,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub input: u32,
    pub logits: Vec<f64>,
    /// Greedy choice from this step's logits.
    pub chosen: u32,
    pub layers: Vec<LayerStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub prompt: Vec<u32>,
    pub prefill_logits: Vec<f64>,
    pub prefill_active: Vec<IndexSet>,
    /// Greedy choice from the prefill logits; input of step 1.
    pub first_token: u32,
    pub steps: Vec<StepRecord>,
}

impl Generation {
    /// Generated tokens: the prefill choice followed by every step's choice.
    pub fn tokens(&self) -> Vec<u32> {
        std::iter::once(self.first_token)
            .chain(self.steps.iter().map(|s| s.chosen))
            .collect()
    }

    pub fn step_logits(&self) -> Vec<&[f64]> {
        self.steps.iter().map(|s| s.logits.as_slice()).collect()
    }
}

/// Greedy decoding for `n_tokens` decode steps.
///
/// With `forced` the inputs of steps `1..=n_tokens` are `forced[0..n_tokens]`
/// instead of the model's own choices (teacher forcing), so two controllers
/// can be compared on identical contexts. Each step still records its own
/// greedy choice.
pub fn generate(
    ckpt: &Checkpoint,
    prompt: &[u32],
    n_tokens: usize,
    ctl: &mut dyn FfnController,
    forced: Option<&[u32]>,
) -> Result<Generation> {
    if n_tokens == 0 {
        return Err(Error::InvalidConfig("n_tokens must be at least 1".into()));
    }
    if prompt.len() + n_tokens > ckpt.config.max_seq {
        return Err(Error::CacheOverflow {
            capacity: ckpt.config.max_seq,
        });
    }
    if let Some(f) = forced {
        if f.len() < n_tokens {
            return Err(Error::InvalidConfig(format!(
                "forced sequence has {} tokens, need {n_tokens}",
                f.len()
            )));
        }
    }
    let Prefill {
        logits,
        mut cache,
        active,
        ..
    } = prefill(ckpt, prompt, ctl)?;
    let first_token = argmax(&logits) as u32;

    let mut steps = Vec::with_capacity(n_tokens);
    let mut input = forced.map_or(first_token, |f| f[0]);
    for t in 1..=n_tokens {
        let d = decode_step(ckpt, &mut cache, input, ctl)?;
        let chosen = argmax(&d.logits) as u32;
        steps.push(StepRecord {
            step: t,
            input,
            logits: d.logits,
            chosen,
            layers: d.layers,
        });
        if t < n_tokens {
            input = forced.map_or(chosen, |f| f[t]);
        }
    }
    Ok(Generation {
        prompt: prompt.to_vec(),
        prefill_logits: logits,
        prefill_active: active,
        first_token,
        steps,
    })
}
