//! Property tests for the invariants each module promises.

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use proptest::prelude::*;

use resembed::embedding::{prototype_resolve, resolve, EmbedParams, PartitionSpec};
use resembed::eval::auc;
use resembed::graph::{
    build_cooccurrence, build_interest_graph, fuse_att, fuse_avg, fuse_gcn, BehaviorSequence,
    CooccurrenceGraph, FusionMatrix,
};
use resembed::nets::{din_pool, Dense, MlpParams};
use resembed::optim::{lr_schedule, TrainConfig};
use resembed::theory::{
    covering_count, envelope_radius, island_graph, mlp_robustness, prop1_verify,
    theorem_bound_at_r, BoundParams, Variant,
};

fn sequences(max_items: u32) -> impl Strategy<Value = (u32, Vec<Vec<u32>>)> {
    (2..=max_items).prop_flat_map(|h| {
        (
            Just(h),
            prop::collection::vec(prop::collection::vec(0..h, 1..=30), 1..=50),
        )
    })
}

fn to_behaviour(seqs: &[Vec<u32>]) -> Vec<BehaviorSequence> {
    seqs.iter()
        .map(|s| BehaviorSequence::new(s.clone()).unwrap())
        .collect()
}

fn symmetric_graph() -> impl Strategy<Value = CooccurrenceGraph> {
    (2usize..16).prop_flat_map(|n| {
        prop::collection::vec(prop::option::weighted(0.4, 1u32..10), n * (n - 1) / 2).prop_map(
            move |upper| {
                let mut edges = Vec::new();
                let mut k = 0;
                for i in 0..n {
                    for j in i + 1..n {
                        if let Some(w) = upper[k] {
                            edges.push((i, j, f64::from(w)));
                            edges.push((j, i, f64::from(w)));
                        }
                        k += 1;
                    }
                }
                CooccurrenceGraph::from_edges(n, edges).unwrap()
            },
        )
    })
}

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-scale..scale, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn fusion_support_ok(w: &FusionMatrix, g: &CooccurrenceGraph) -> bool {
    (0..g.n_items()).all(|i| {
        w.row(i).iter().all(|&(j, c)| {
            j as usize != i && g.weight(i, j as usize) > 0.0 && (0.0..=1.0).contains(&c)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cooccurrence_matches_pair_enumeration((h, seqs) in sequences(40), window in 1usize..=3) {
        let g = build_cooccurrence(&to_behaviour(&seqs), window, h as usize).unwrap();
        let mut want: HashMap<(usize, usize), f64> = HashMap::new();
        for s in &seqs {
            for c in 0..s.len() {
                for p in 0..s.len() {
                    if p != c && p.abs_diff(c) <= window && s[p] != s[c] {
                        *want.entry((s[c] as usize, s[p] as usize)).or_default() += 1.0;
                    }
                }
            }
        }
        let got: HashMap<(usize, usize), f64> = g.edges().map(|(i, j, w)| ((i, j), w)).collect();
        prop_assert_eq!(got, want);
        prop_assert!(g.is_symmetric());
    }

    #[test]
    fn prune_keeps_largest_entries((h, seqs) in sequences(25), k in 1usize..6) {
        let z = build_cooccurrence(&to_behaviour(&seqs), 2, h as usize).unwrap();
        let pruned = z.prune_topk(k).unwrap();
        for i in 0..z.n_items() {
            let mut row: Vec<(u32, f64)> = z.row(i).to_vec();
            row.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            row.truncate(k);
            let mut got = pruned.row(i).to_vec();
            got.sort_by_key(|e| e.0);
            row.sort_by_key(|e| e.0);
            prop_assert_eq!(got, row);
        }
        for (i, j, w) in pruned.edges() {
            prop_assert!(w <= z.weight(i, j));
        }
        let sym = pruned.symmetrize();
        prop_assert!(sym.is_symmetric());
        for i in 0..z.n_items() {
            for j in 0..z.n_items() {
                prop_assert_eq!(sym.weight(i, j), pruned.weight(i, j).max(pruned.weight(j, i)));
            }
        }
    }

    #[test]
    fn interest_graph_is_symmetric_without_self_loops((h, seqs) in sequences(30)) {
        let g = build_interest_graph(&to_behaviour(&seqs), 2, 8, h as usize).unwrap();
        prop_assert!(g.is_symmetric());
        prop_assert!(g.edges().all(|(i, j, w)| i != j && w > 0.0));
    }

    #[test]
    fn fusion_rows_and_support(g in symmetric_graph(), seed in any::<u64>()) {
        let n = g.n_items();
        let central = Array2::from_shape_fn((n, 3), |(i, k)| {
            ((seed.wrapping_mul(31).wrapping_add((i * 7 + k) as u64) % 1000) as f64) / 250.0 - 2.0
        });
        let avg = fuse_avg(&g);
        let att = fuse_att(&g, &central).unwrap();
        let gcn = fuse_gcn(&g);
        for w in [&avg, &att] {
            prop_assert!(fusion_support_ok(w, &g));
            for i in 0..n {
                if !w.row(i).is_empty() {
                    prop_assert!((w.row_sum(i) - 1.0).abs() <= 1e-12);
                }
            }
        }
        prop_assert!(fusion_support_ok(&gcn, &g));
        prop_assert!(gcn.is_symmetric(1e-12));
        prop_assert!(gcn.spectral_radius(200) <= 1.0 + 1e-9);
    }

    #[test]
    fn resolve_is_linear(
        c1 in matrix(6, 3, 1.0), c2 in matrix(6, 3, 1.0),
        r1 in matrix(6, 3, 1.0), r2 in matrix(6, 3, 1.0),
        alpha in -2.0f64..2.0, beta in -2.0f64..2.0,
    ) {
        let g = island_graph(&[3, 3]).unwrap();
        let w = fuse_avg(&g);
        let e = |c: Array2<f64>, r: Array2<f64>| {
            resolve(Some(&w), &EmbedParams::new(c, r).unwrap()).unwrap().table
        };
        let combined = e(&c1 * alpha + &c2 * beta, &r1 * alpha + &r2 * beta);
        let separate = e(c1.clone(), r1.clone()) * alpha + e(c2.clone(), r2.clone()) * beta;
        for (a, b) in combined.iter().zip(separate.iter()) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn averaging_preserves_island_centres(c in matrix(9, 4, 5.0)) {
        let g = island_graph(&[4, 5]).unwrap();
        let e = resolve(Some(&fuse_avg(&g)), &EmbedParams::new(c.clone(), Array2::zeros((9, 4))).unwrap())
            .unwrap()
            .table;
        for range in [0..4usize, 4..9] {
            for k in 0..4 {
                let before: f64 = range.clone().map(|i| c[[i, k]]).sum();
                let after: f64 = range.clone().map(|i| e[[i, k]]).sum();
                prop_assert!((before - after).abs() / range.len() as f64 <= 1e-10);
            }
        }
    }

    #[test]
    fn prototypes_without_residual_collapse_domains(
        assignment in prop::collection::vec(0u32..3, 3..12),
        centres in matrix(3, 4, 3.0),
    ) {
        let mut assignment = assignment;
        assignment[..3].copy_from_slice(&[0, 1, 2]);
        let spec = PartitionSpec::new(assignment.clone(), 3).unwrap();
        let table = prototype_resolve(&spec, &centres, &Array2::zeros((assignment.len(), 4))).unwrap();
        for members in spec.members() {
            let pts = table.table.select(ndarray::Axis(0), &members);
            prop_assert!(envelope_radius(pts.view()).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn din_pool_stays_in_convex_hull(hist in matrix(5, 3, 4.0), target in prop::collection::vec(-4.0f64..4.0, 3)) {
        let rows: Vec<_> = hist.rows().into_iter().collect();
        let (pooled, weights) = din_pool(&rows, Array1::from(target).view()).unwrap();
        prop_assert!(weights.iter().all(|&w| w >= 0.0));
        prop_assert!((weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for k in 0..3 {
            let col = hist.column(k);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(pooled[k] >= lo - 1e-12 && pooled[k] <= hi + 1e-12);
            let mix: f64 = weights.iter().zip(col.iter()).map(|(w, x)| w * x).sum();
            prop_assert!((mix - pooled[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn spectral_norm_ignores_hidden_unit_order(
        w1 in matrix(5, 4, 1.0), w2 in matrix(3, 5, 1.0), w3 in matrix(1, 3, 1.0),
        perm in Just((0..5usize).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let dense = |w: Array2<f64>| Dense { bias: Array1::zeros(w.nrows()), weight: w };
        let mlp = MlpParams::new(vec![dense(w1.clone()), dense(w2.clone()), dense(w3.clone())]).unwrap();
        let p1 = w1.select(ndarray::Axis(0), &perm);
        let p2 = w2.select(ndarray::Axis(1), &perm);
        let permuted = MlpParams::new(vec![dense(p1), dense(p2), dense(w3)]).unwrap();
        let (a, b) = (mlp.mean_spectral_norm(), permuted.mean_spectral_norm());
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
    }

    #[test]
    fn lr_schedule_never_increases(lr0 in 1e-4f64..1.0, gamma in 0.1f64..1.0, interval in 1usize..2000, step in 0usize..100_000) {
        let cfg = TrainConfig { lr0, decay_gamma: gamma, decay_interval: interval, ..TrainConfig::default() };
        prop_assert!(lr_schedule(step + 1, &cfg) <= lr_schedule(step, &cfg));
        prop_assert!(lr_schedule(step, &cfg) <= lr0);
    }

    #[test]
    fn auc_matches_pair_count(
        scored in prop::collection::vec((0u8..20, 0u8..2), 2..200)
    ) {
        let mut scored: Vec<(f64, u8)> = scored.into_iter().map(|(s, y)| (f64::from(s), y)).collect();
        scored[0].1 = 0;
        scored[1].1 = 1;
        let (mut twice, mut pos, mut neg) = (0u64, 0u64, 0u64);
        for &(sp, yp) in &scored {
            if yp == 1 { pos += 1 } else { neg += 1 }
            for &(sn, yn) in &scored {
                if yp == 1 && yn == 0 {
                    twice += u64::from(sp > sn) * 2 + u64::from(sp == sn);
                }
            }
        }
        let got = auc(&scored).unwrap();
        prop_assert_eq!(got, twice as f64 / (2 * pos * neg) as f64);
        let transformed: Vec<(f64, u8)> = scored.iter().map(|&(s, y)| ((s * 0.3).exp() - 4.0, y)).collect();
        prop_assert_eq!(auc(&transformed).unwrap(), got);
    }

    #[test]
    fn island_identity_holds(
        sizes in prop::collection::vec(3usize..=12, 1..=10),
        dim in prop::sample::select(vec![2usize, 8, 18]),
        seed in any::<u64>(),
    ) {
        let g = island_graph(&sizes).unwrap();
        let mut state = seed | 1;
        let x = Array2::from_shape_simple_fn((g.n_items(), dim), || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 20.0 - 10.0
        });
        prop_assert!(prop1_verify(&g, &x).unwrap().max_deviation <= 1e-9);
    }

    #[test]
    fn envelope_radius_translates_and_scales(pts in matrix(7, 3, 5.0), shift in prop::collection::vec(-50.0f64..50.0, 3), s in 0.01f64..20.0) {
        let r = envelope_radius(pts.view()).unwrap();
        let shifted = &pts + &Array1::from(shift);
        prop_assert!((envelope_radius(shifted.view()).unwrap() - r).abs() <= 1e-9 * (1.0 + r));
        let scaled = &pts * s;
        prop_assert!((envelope_radius(scaled.view()).unwrap() - s * r).abs() <= 1e-9 * (1.0 + s * r));
    }

    #[test]
    fn bound_monotone_in_each_parameter(
        r in 1e-3f64..10.0,
        factor in 1.05f64..4.0,
        variant in prop::sample::select(vec![Variant::Thm1, Variant::Thm2]),
    ) {
        let base = BoundParams { dim: 2, steps_per_period: 1, periods: 2, ..BoundParams::default() };
        let at = |p: &BoundParams| theorem_bound_at_r(p, r, variant).unwrap();
        let b0 = at(&base);
        let r_max = at(&BoundParams { r_max: base.r_max * factor, ..base });
        let w_norm = at(&BoundParams { w_norm: base.w_norm * factor, ..base });
        let n_domains = at(&BoundParams { n_domains: base.n_domains * factor, ..base });
        let n_samples = at(&BoundParams { n_samples: base.n_samples * factor, ..base });
        prop_assert!(r_max > b0);
        prop_assert!(w_norm > b0);
        prop_assert!(n_domains > b0);
        prop_assert!(n_samples < b0);
        let ns = at(&BoundParams { n_sequences: base.n_sequences * factor, ..base });
        match variant {
            Variant::Thm2 => prop_assert!(ns > b0),
            Variant::Thm1 => prop_assert_eq!(ns, b0),
        }
    }

    #[test]
    fn log_space_matches_direct(radius in 0.1f64..5.0, dim in 1u32..6, r in 0.01f64..5.0, w in 0.5f64..2.0, depth in 1u32..4, n in 1u32..4) {
        let ratio = 2.0 * radius * f64::from(dim).sqrt() / r;
        let direct = ratio.powi(dim as i32);
        if direct < 1e300 {
            let lv = covering_count(radius, dim, r).unwrap();
            prop_assert!((lv.ln.exp() - direct).abs() <= 1e-12 * direct);
            prop_assert!(lv.value.is_some_and(|v| (v - direct).abs() <= 1e-12 * direct));
        }
        let (eps, ln_l) = mlp_robustness(w, depth, n, r, radius, dim).unwrap();
        prop_assert!((eps - w.powi(depth as i32) * r * f64::from(n).sqrt()).abs() <= 1e-12 * eps);
        let l_direct = 2.0 * ratio.powi((n * dim) as i32);
        if l_direct < 1e300 {
            prop_assert!((ln_l.exp() - l_direct).abs() <= 1e-12 * l_direct);
        }
    }
}
