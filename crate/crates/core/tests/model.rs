use prunesim_core::model::{
    decode_step, generate, prefill, Checkpoint, DenseController, FfnController, FfnTap, ModelConfig,
};
use prunesim_core::numerics::{rms_norm, silu, softmax, IndexSet, Matrix, SplitMix64};
use prunesim_core::pruning::{Controller, Mode, PruningConfig};
use prunesim_core::Error;

/// Fixed channel sets for every layer and step.
struct Fixed {
    prefill: IndexSet,
    compute: IndexSet,
    active: IndexSet,
}

impl FfnController for Fixed {
    fn prefill_active(&mut self, _tap: &FfnTap) -> prunesim_core::Result<IndexSet> {
        Ok(self.prefill.clone())
    }
    fn decode_compute_set(&mut self, _l: usize, _s: usize) -> prunesim_core::Result<IndexSet> {
        Ok(self.compute.clone())
    }
    fn decode_active(&mut self, _tap: &FfnTap) -> prunesim_core::Result<IndexSet> {
        Ok(self.active.clone())
    }
}

fn toy() -> Checkpoint {
    Checkpoint::init(ModelConfig::toy(17)).unwrap()
}

fn prompt(seed: u64, len: usize, vocab: usize) -> Vec<u32> {
    let mut g = SplitMix64::new(seed);
    (0..len).map(|_| g.next_below(vocab as u64) as u32).collect()
}

fn random_subset(seed: u64, n: usize, keep: f64) -> IndexSet {
    let mut g = SplitMix64::new(seed);
    (0..n).filter(|_| g.next_f64() < keep).collect()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Copy of `ckpt` whose down-projection columns outside `keep` are zero.
fn zero_columns(ckpt: &Checkpoint, keep: &IndexSet) -> Checkpoint {
    let mut out = ckpt.clone();
    for w in &mut out.layers {
        for r in 0..w.down.rows() {
            for c in 0..w.down.cols() {
                if !keep.contains(c) {
                    w.down.set(r, c, 0.0);
                }
            }
        }
    }
    out
}

/// Whole-sequence recompute without a cache, written against plain matrix
/// products. Returns last-position logits.
fn reference_forward(ckpt: &Checkpoint, tokens: &[u32], with_ffn: bool) -> Vec<f64> {
    let cfg = &ckpt.config;
    let (hd, group) = (cfg.head_dim(), cfg.n_heads / cfg.n_kv_heads);
    let n = tokens.len();
    let mut x: Vec<Vec<f64>> = tokens
        .iter()
        .enumerate()
        .map(|(p, &t)| {
            (0..cfg.d_model)
                .map(|j| ckpt.tok_embed.get(t as usize, j) + ckpt.pos_embed.get(p, j))
                .collect()
        })
        .collect();
    let proj = |w: &Matrix, v: &[f64]| -> Vec<f64> {
        (0..w.rows()).map(|r| (0..w.cols()).map(|c| w.get(r, c) * v[c]).sum()).collect()
    };
    for w in &ckpt.layers {
        let xn: Vec<Vec<f64>> = x.iter().map(|v| rms_norm(v, &w.attn_norm)).collect();
        let q: Vec<Vec<f64>> = xn.iter().map(|v| proj(&w.wq, v)).collect();
        let k: Vec<Vec<f64>> = xn.iter().map(|v| proj(&w.wk, v)).collect();
        let v: Vec<Vec<f64>> = xn.iter().map(|v| proj(&w.wv, v)).collect();
        for p in 0..n {
            let mut att = vec![0.0; cfg.d_model];
            for h in 0..cfg.n_heads {
                let ko = (h / group) * hd;
                let s: Vec<f64> = (0..=p)
                    .map(|j| (0..hd).map(|d| q[p][h * hd + d] * k[j][ko + d]).sum::<f64>() / (hd as f64).sqrt())
                    .collect();
                let a = softmax(&s);
                for d in 0..hd {
                    att[h * hd + d] = (0..=p).map(|j| a[j] * v[j][ko + d]).sum();
                }
            }
            let o = proj(&w.wo, &att);
            for (xi, oi) in x[p].iter_mut().zip(o) {
                *xi += oi;
            }
        }
        if with_ffn {
            for xp in x.iter_mut() {
                let xn = rms_norm(xp, &w.ffn_norm);
                let g = proj(&w.gate, &xn);
                let u = proj(&w.up, &xn);
                let h: Vec<f64> = g.iter().zip(&u).map(|(a, b)| silu(*a) * b).collect();
                let y = proj(&w.down, &h);
                for (xi, yi) in xp.iter_mut().zip(y) {
                    *xi += yi;
                }
            }
        }
    }
    let xn = rms_norm(&x[n - 1], &ckpt.final_norm);
    proj(&ckpt.tok_embed, &xn)
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{x} vs {y}");
    }
}

#[test]
fn prefill_logits_are_finite() {
    let ck = toy();
    let p = prompt(1, 32, 256);
    let out = prefill(&ck, &p, &mut DenseController::new(256)).unwrap();
    assert_eq!(out.logits.len(), 256);
    assert!(out.logits.iter().all(|v| v.is_finite()));
    assert_eq!(out.taps.len(), 4);
    assert_eq!(out.taps[0].values.rows(), 32);
    assert_eq!(out.cache.len(), 32);
}

#[test]
fn keep_all_matches_reference_forward() {
    let ck = toy();
    let p = prompt(2, 12, 256);
    let dense = prefill(&ck, &p, &mut DenseController::new(256)).unwrap();
    let all = IndexSet::all(256);
    let mut keep_all = Fixed {
        prefill: all.clone(),
        compute: all.clone(),
        active: all,
    };
    let fixed = prefill(&ck, &p, &mut keep_all).unwrap();
    assert_eq!(bits(&dense.logits), bits(&fixed.logits));
    assert_close(&dense.logits, &reference_forward(&ck, &p, true), 1e-10);
}

#[test]
fn keep_none_is_attention_only() {
    let ck = toy();
    let p = prompt(3, 10, 256);
    let mut none = Fixed {
        prefill: IndexSet::empty(),
        compute: IndexSet::empty(),
        active: IndexSet::empty(),
    };
    let out = prefill(&ck, &p, &mut none).unwrap();
    let zeroed = zero_columns(&ck, &IndexSet::empty());
    let oracle = prefill(&zeroed, &p, &mut DenseController::new(256)).unwrap();
    assert_eq!(bits(&out.logits), bits(&oracle.logits));
    assert_close(&out.logits, &reference_forward(&ck, &p, false), 1e-10);
}

#[test]
fn prefill_random_half_matches_zero_column_oracle() {
    let ck = toy();
    let p = prompt(4, 16, 256);
    let keep = random_subset(99, 256, 0.5);
    let mut ctl = Fixed {
        prefill: keep.clone(),
        compute: keep.clone(),
        active: keep.clone(),
    };
    let out = prefill(&ck, &p, &mut ctl).unwrap();
    let oracle = prefill(&zero_columns(&ck, &keep), &p, &mut DenseController::new(256)).unwrap();
    assert_eq!(bits(&out.logits), bits(&oracle.logits));
}

#[test]
fn two_phase_decode_matches_zero_column_oracle() {
    let ck = toy();
    let p = prompt(5, 8, 256);
    let compute = random_subset(7, 256, 0.7);
    let active: IndexSet = compute.iter().copied().filter(|i| i % 3 != 0).collect();
    let mut ctl = Fixed {
        prefill: active.clone(),
        compute,
        active: active.clone(),
    };
    let mut run = prefill(&ck, &p, &mut ctl).unwrap();
    let a = decode_step(&ck, &mut run.cache, 42, &mut ctl).unwrap();
    let b = decode_step(&ck, &mut run.cache, 7, &mut ctl).unwrap();

    let zeroed = zero_columns(&ck, &active);
    let mut dense = DenseController::new(256);
    let mut oracle = prefill(&zeroed, &p, &mut dense).unwrap();
    let oa = decode_step(&zeroed, &mut oracle.cache, 42, &mut dense).unwrap();
    let ob = decode_step(&zeroed, &mut oracle.cache, 7, &mut dense).unwrap();
    assert_eq!(bits(&a.logits), bits(&oa.logits));
    assert_eq!(bits(&b.logits), bits(&ob.logits));
}

#[test]
fn all_all_decode_is_dense_decode() {
    let ck = toy();
    let p = prompt(6, 8, 256);
    let all = IndexSet::all(256);
    let mut fixed = Fixed {
        prefill: all.clone(),
        compute: all.clone(),
        active: all,
    };
    let mut dense = DenseController::new(256);
    let mut a = prefill(&ck, &p, &mut fixed).unwrap();
    let mut b = prefill(&ck, &p, &mut dense).unwrap();
    let da = decode_step(&ck, &mut a.cache, 11, &mut fixed).unwrap();
    let db = decode_step(&ck, &mut b.cache, 11, &mut dense).unwrap();
    assert_eq!(bits(&da.logits), bits(&db.logits));
}

#[test]
fn phase_two_must_be_subset_of_phase_one() {
    let ck = toy();
    let p = prompt(7, 4, 256);
    let mut ctl = Fixed {
        prefill: IndexSet::all(256),
        compute: (0..100).collect(),
        active: (50..150).collect(),
    };
    let mut run = prefill(&ck, &p, &mut ctl).unwrap();
    let err = decode_step(&ck, &mut run.cache, 1, &mut ctl).unwrap_err();
    assert!(matches!(err, Error::Controller(_)));
    // a failed step leaves the cache untouched
    assert_eq!(run.cache.len(), 4);
    ctl.active = (0..50).collect();
    decode_step(&ck, &mut run.cache, 1, &mut ctl).unwrap();
    assert_eq!(run.cache.len(), 5);
}

#[test]
fn kv_cache_matches_full_prefill() {
    let ck = toy();
    let p = prompt(8, 20, 256);
    let mut dense = DenseController::new(256);
    let mut run = prefill(&ck, &p, &mut dense).unwrap();
    let step = decode_step(&ck, &mut run.cache, 99, &mut dense).unwrap();
    let mut longer = p.clone();
    longer.push(99);
    let full = prefill(&ck, &longer, &mut dense).unwrap();
    assert_close(&step.logits, &full.logits, 1e-9);
}

#[test]
fn empty_prompt_and_overflow() {
    let ck = toy();
    let mut dense = DenseController::new(256);
    assert!(matches!(prefill(&ck, &[], &mut dense), Err(Error::EmptyPrompt)));
    let p = prompt(9, 128, 256);
    let mut run = prefill(&ck, &p, &mut dense).unwrap();
    assert!(matches!(
        decode_step(&ck, &mut run.cache, 0, &mut dense),
        Err(Error::CacheOverflow { .. })
    ));
    assert!(matches!(
        generate(&ck, &p[..100], 29, &mut dense, None),
        Err(Error::CacheOverflow { .. })
    ));
    assert!(prefill(&ck, &[256], &mut dense).is_err());
}

#[test]
fn generate_is_deterministic() {
    let ck = toy();
    let p = prompt(10, 16, 256);
    let a = generate(&ck, &p, 20, &mut DenseController::new(256), None).unwrap();
    let b = generate(&ck, &p, 20, &mut DenseController::new(256), None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.tokens().len(), 21);
}

#[test]
fn single_token_generation_runs_one_step() {
    let ck = toy();
    let p = prompt(11, 5, 256);
    let g = generate(&ck, &p, 1, &mut DenseController::new(256), None).unwrap();
    assert_eq!(g.steps.len(), 1);
    assert_eq!(g.steps[0].input, g.first_token);
    assert!(generate(&ck, &p, 0, &mut DenseController::new(256), None).is_err());
}

#[test]
fn teacher_forcing_follows_given_inputs() {
    let ck = toy();
    let p = prompt(12, 5, 256);
    let forced = vec![3, 1, 4, 1, 5];
    let g = generate(&ck, &p, 5, &mut DenseController::new(256), Some(&forced)).unwrap();
    let inputs: Vec<u32> = g.steps.iter().map(|s| s.input).collect();
    assert_eq!(inputs, forced);
}

#[test]
fn pop_with_zero_ratio_matches_dense_tokens() {
    let ck = toy();
    let p = prompt(13, 16, 256);
    let dense = generate(&ck, &p, 24, &mut DenseController::new(256), None).unwrap();
    let mut pop = Controller::new(PruningConfig::new(Mode::Pop, 0.0, 0.1), &ck).unwrap();
    let g = generate(&ck, &p, 24, &mut pop, None).unwrap();
    assert_eq!(g.tokens(), dense.tokens());
    for (a, b) in g.steps.iter().zip(&dense.steps) {
        assert_eq!(bits(&a.logits), bits(&b.logits));
    }
}

#[test]
fn seed_changes_generation() {
    let a = Checkpoint::init(ModelConfig::toy(1)).unwrap();
    let b = Checkpoint::init(ModelConfig::toy(2)).unwrap();
    let p = prompt(14, 8, 256);
    let ga = prefill(&a, &p, &mut DenseController::new(256)).unwrap();
    let gb = prefill(&b, &p, &mut DenseController::new(256)).unwrap();
    assert_ne!(ga.logits, gb.logits);
}
