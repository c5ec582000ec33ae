//! Partition and selection invariants against brute-force set oracles.

use std::collections::BTreeSet;

use proptest::prelude::*;
use prunesim_core::model::Stage;
use prunesim_core::numerics::IndexSet;
use prunesim_core::pruning::{build_partition, select_step_active, ChannelScores, Mode, PartitionCounts, PruningConfig};

fn scores(values: Vec<f64>, stage: Stage) -> ChannelScores {
    ChannelScores { layer: 0, values, stage }
}

fn set(s: &IndexSet) -> BTreeSet<usize> {
    s.iter().copied().collect()
}

/// Channels that beat `i` under (score desc, index asc); `i`'s rank.
fn rank_of(v: &[f64], i: usize) -> usize {
    (0..v.len()).filter(|&j| v[j] > v[i] || (v[j] == v[i] && j < i)).count()
}

fn score_vec(d_ff: usize) -> impl Strategy<Value = Vec<f64>> {
    // a small value alphabet mixed in forces ties
    prop::collection::vec(prop_oneof![0f64..10.0, (0u8..4).prop_map(f64::from)], d_ff)
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64, f64)> {
    (8usize..300, 0usize..=12, prop::sample::select(vec![0.0, 0.05, 0.1, 0.2, 0.5, 1.0]))
        .prop_flat_map(|(d_ff, ri, g)| (score_vec(d_ff), score_vec(d_ff), Just(ri as f64 * 0.05), Just(g)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn partition_matches_rank_oracle((pre, step, r, g) in instance()) {
        let d_ff = pre.len();
        let cfg = PruningConfig::new(Mode::Pop, r, g);
        let p = build_partition(&scores(pre.clone(), Stage::Prefill), &cfg, d_ff).unwrap();
        let c = PartitionCounts::new(d_ff, r, g).unwrap();

        let (rs, cs, ps) = (set(&p.retained), set(&p.candidate), set(&p.pruned));
        prop_assert!(rs.is_disjoint(&cs) && rs.is_disjoint(&ps) && cs.is_disjoint(&ps));
        let all: BTreeSet<usize> = rs.union(&cs).chain(ps.iter()).copied().collect();
        prop_assert_eq!(all, (0..d_ff).collect::<BTreeSet<_>>());
        prop_assert!(p.retained.len() <= p.budget && p.budget <= p.retained.len() + p.candidate.len());

        // oracle: membership from each channel's rank
        for i in 0..d_ff {
            let k = rank_of(&pre, i);
            prop_assert_eq!(rs.contains(&i), k < c.retained);
            prop_assert_eq!(ps.contains(&i), k >= d_ff - c.pruned);
        }

        let active = select_step_active(&p, &scores(step.clone(), Stage::Decode(1))).unwrap();
        let a = set(&active);
        prop_assert_eq!(a.len(), p.budget);
        prop_assert!(rs.is_subset(&a));
        prop_assert!(a.is_subset(&rs.union(&cs).copied().collect()));
        prop_assert!(a.is_disjoint(&ps));
        // oracle: chosen candidates are the top ones among candidates only
        let chosen: Vec<usize> = a.difference(&rs).copied().collect();
        for &i in &chosen {
            let beaten_by = cs.iter().filter(|&&j| step[j] > step[i] || (step[j] == step[i] && j < i)).count();
            prop_assert!(beaten_by < chosen.len());
        }
    }

    #[test]
    fn positive_scaling_keeps_sets((pre, step, r, g) in instance(), c in 0.01f64..100.0) {
        let d_ff = pre.len();
        let cfg = PruningConfig::new(Mode::Pop, r, g);
        let p = build_partition(&scores(pre.clone(), Stage::Prefill), &cfg, d_ff).unwrap();
        let scaled: Vec<f64> = pre.iter().map(|v| v * c).collect();
        let q = build_partition(&scores(scaled, Stage::Prefill), &cfg, d_ff).unwrap();
        prop_assert_eq!(&p, &q);
        let s1 = select_step_active(&p, &scores(step.clone(), Stage::Decode(2))).unwrap();
        let s2 = select_step_active(&p, &scores(step.iter().map(|v| v * c).collect(), Stage::Decode(2))).unwrap();
        prop_assert_eq!(s1, s2);
    }

    #[test]
    fn wider_band_nests((pre, _step, r, _g) in instance(), g1 in 0f64..1.0, g2 in 0f64..1.0) {
        let d_ff = pre.len();
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let s = scores(pre, Stage::Prefill);
        let narrow = build_partition(&s, &PruningConfig::new(Mode::Pop, r, lo), d_ff).unwrap();
        let wide = build_partition(&s, &PruningConfig::new(Mode::Pop, r, hi), d_ff).unwrap();
        prop_assert!(wide.retained.len() <= narrow.retained.len());
        prop_assert!(wide.retained.is_subset(&narrow.retained));
        prop_assert!(wide.pruned.is_subset(&narrow.pruned));
        prop_assert_eq!(wide.budget, narrow.budget);
    }
}

#[test]
fn grid_totality() {
    for d_ff in [8, 100, 256] {
        for ri in 0..=12 {
            for g in [0.0, 0.05, 0.1, 0.2, 1.0] {
                let r = ri as f64 * 0.05;
                let c = PartitionCounts::new(d_ff, r, g).unwrap();
                assert_eq!(c.retained + c.candidate + c.pruned, d_ff);
                assert!(c.retained <= c.budget && c.budget <= c.retained + c.candidate, "{d_ff} {r} {g}");
            }
        }
    }
}
