use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use qgcn::data::{kcore_filter, split_per_user, RawDataset, SplitRatios};
use qgcn::graph::{discard_edges, inject_edges, perturbation_count, InteractionSet, NormalizedAdjacency};
use qgcn::model::{
    dropout_l2norm, forward, init_params, load_checkpoint, propagate_layer, save_checkpoint, ModelConfig, Mode,
    ReadoutKind, Transform, Variant,
};
use qgcn::quaternion::{Quaternion, QuaternionMatrix, QuaternionVector};
use qgcn::table::Table;

fn quaternion() -> impl Strategy<Value = Quaternion> {
    prop::array::uniform4(-10.0f64..10.0).prop_map(Quaternion::from_array)
}

fn graph(max_users: usize, max_items: usize) -> impl Strategy<Value = InteractionSet> {
    (1..=max_users, 1..=max_items)
        .prop_flat_map(|(m, n)| (Just(m), Just(n), prop::collection::vec(any::<bool>(), m * n)))
        .prop_map(|(m, n, mask)| {
            let edges = (0..m * n).filter(|&x| mask[x]).map(|x| (x / n, x % n));
            InteractionSet::build(m, n, edges).unwrap()
        })
}

fn raw_dataset() -> impl Strategy<Value = RawDataset> {
    prop::collection::vec((0u64..15, 100u64..120), 0..150).prop_map(RawDataset::from_edges)
}

fn edge_set(g: &InteractionSet) -> BTreeSet<(usize, usize)> {
    g.edges().collect()
}

/// Repeatedly deletes every under-degree user and item until nothing changes.
fn naive_kcore(edges: &BTreeSet<(u64, u64)>, k: usize) -> BTreeSet<(u64, u64)> {
    let mut current = edges.clone();
    loop {
        let mut udeg: BTreeMap<u64, usize> = BTreeMap::new();
        let mut ideg: BTreeMap<u64, usize> = BTreeMap::new();
        for &(u, i) in &current {
            *udeg.entry(u).or_default() += 1;
            *ideg.entry(i).or_default() += 1;
        }
        let next: BTreeSet<(u64, u64)> = current
            .iter()
            .copied()
            .filter(|(u, i)| udeg[u] >= k && ideg[i] >= k)
            .collect();
        if next == current {
            return current;
        }
        current = next;
    }
}

fn table(rows: usize, width: usize, values: &[f64]) -> Table {
    Table::from_vec(rows, width, values[..rows * width].to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hamilton_norm_is_multiplicative(q in quaternion(), p in quaternion()) {
        let lhs = q.hamilton(p).norm();
        let rhs = q.norm() * p.norm();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.max(1e-300));
    }

    #[test]
    fn hamilton_anticommutes_on_pure_units(a in 1usize..4, b in 1usize..4) {
        prop_assume!(a != b);
        let unit = |n: usize| {
            let mut c = [0.0; 4];
            c[n] = 1.0;
            Quaternion::from_array(c)
        };
        prop_assert_eq!(unit(a) * unit(b), -(unit(b) * unit(a)));
    }

    #[test]
    fn vector_ops_match_concatenation(x in prop::collection::vec(-5.0f64..5.0, 32), y in prop::collection::vec(-5.0f64..5.0, 32)) {
        let a = QuaternionVector::from_concat(&x).unwrap();
        let b = QuaternionVector::from_concat(&y).unwrap();
        let sum: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p + q).collect();
        prop_assert_eq!(a.add(&b).unwrap().to_concat(), sum);
        let dot: f64 = x.iter().zip(&y).map(|(p, q)| p * q).sum();
        prop_assert!((a.inner(&b).unwrap() - dot).abs() < 1e-10);
    }

    #[test]
    fn quaternion_matvec_matches_dense_d4(w in prop::collection::vec(-1.0f64..1.0, 64), x in prop::collection::vec(-1.0f64..1.0, 16)) {
        let blocks: Vec<Vec<f64>> = w.chunks(16).map(|c| c.to_vec()).collect();
        let m = QuaternionMatrix::from_blocks(4, blocks[0].clone(), blocks[1].clone(), blocks[2].clone(), blocks[3].clone()).unwrap();
        let dense = m.realize_block_matrix();
        let y = m.matvec(&QuaternionVector::from_concat(&x).unwrap()).unwrap().to_concat();
        for r in 0..16 {
            let expect: f64 = (0..16).map(|c| dense[r * 16 + c] * x[c]).sum();
            prop_assert!((expect - y[r]).abs() < 1e-10);
        }
        // Block (i-row, r-column) is W_i itself.
        for a in 0..4 {
            for b in 0..4 {
                prop_assert_eq!(dense[(4 + a) * 16 + b], blocks[1][a * 4 + b]);
            }
        }
    }

    #[test]
    fn adjacency_matches_dense_oracle(g in graph(6, 6)) {
        let n = g.num_nodes();
        let m = g.num_users();
        let mut deg = vec![0.0f64; n];
        for (u, i) in g.edges() {
            deg[u] += 1.0;
            deg[m + i] += 1.0;
        }
        let adj = NormalizedAdjacency::build(&g);
        for r in 0..n {
            for c in 0..n {
                let linked = (r < m && c >= m && g.contains(r, c - m)) || (c < m && r >= m && g.contains(c, r - m));
                let expect = if linked { 1.0 / (deg[r].sqrt() * deg[c].sqrt()) } else { 0.0 };
                prop_assert!((adj.get(r, c) - expect).abs() <= 1e-12);
                prop_assert_eq!(adj.get(r, c).to_bits(), adj.get(c, r).to_bits());
            }
        }
    }

    #[test]
    fn spmv_matches_dense_product(g in graph(5, 5), values in prop::collection::vec(-1.0f64..1.0, 80)) {
        let n = g.num_nodes();
        let t = table(n, 8, &values);
        let adj = NormalizedAdjacency::build(&g);
        let out = adj.spmv(&t).unwrap();
        for r in 0..n {
            for c in 0..8 {
                let expect: f64 = (0..n).map(|k| adj.get(r, k) * t.row(k)[c]).sum();
                prop_assert!((out.row(r)[c] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transform_commutes_with_aggregation(g in graph(5, 5), values in prop::collection::vec(-1.0f64..1.0, 80), seed in any::<u64>()) {
        let n = g.num_nodes();
        let e = table(n, 8, &values);
        let cfg = ModelConfig { quaternion_dim: 2, ..ModelConfig::default() };
        let params = init_params(&cfg, 1, 1, seed).unwrap();
        let w = &params.transforms[0];
        let adj = NormalizedAdjacency::build(&g);
        let apply_rows = |t: &Table| {
            let mut out = Table::zeros(t.rows(), t.width());
            for r in 0..t.rows() {
                w.apply(t.row(r), out.row_mut(r));
            }
            out
        };
        let layer = propagate_layer(&adj, &e, Some(w)).unwrap();
        let after = apply_rows(&adj.spmv(&e).unwrap());
        let before = adj.spmv(&apply_rows(&e)).unwrap();
        for ((a, b), c) in layer.as_slice().iter().zip(after.as_slice()).zip(before.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-10 && (a - c).abs() <= 1e-10);
        }
    }

    #[test]
    fn eval_normalization_gives_unit_rows(values in prop::collection::vec(-3.0f64..3.0, 48), zero_row in 0usize..6) {
        let mut t = table(6, 8, &values);
        t.row_mut(zero_row).fill(0.0);
        let out = dropout_l2norm(&t, 0.5, Mode::Eval, 1).output;
        for r in 0..6 {
            let norm = out.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            if r == zero_row {
                prop_assert_eq!(norm, 0.0);
            } else {
                prop_assert!((norm - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn kcore_is_a_fixpoint_matching_naive_peeling(d in raw_dataset(), k in 1usize..5) {
        let edges: BTreeSet<(u64, u64)> = d.external_edges().collect();
        let expect = naive_kcore(&edges, k);
        match kcore_filter(&d, k) {
            Ok(f) => {
                let got: BTreeSet<(u64, u64)> = f.external_edges().collect();
                prop_assert_eq!(&got, &expect);
                let again = kcore_filter(&f, k).unwrap();
                prop_assert_eq!(again, f);
            }
            Err(_) => prop_assert!(expect.is_empty()),
        }
    }

    #[test]
    fn dense_remap_preserves_edges(d in raw_dataset()) {
        let original: BTreeSet<(u64, u64)> = d.external_edges().collect();
        let g = d.to_interactions();
        let mapped: BTreeSet<(u64, u64)> = g.edges().map(|(u, i)| (d.user_id(u), d.item_id(i))).collect();
        prop_assert_eq!(mapped, original);
        prop_assert_eq!(g.edge_count(), d.edge_count());
    }

    #[test]
    fn splits_partition_each_user(d in raw_dataset(), seed in any::<u64>()) {
        let s = split_per_user(&d, SplitRatios::default(), seed);
        let all = d.to_interactions();
        let (tr, va, te) = (edge_set(&s.train), edge_set(&s.validation), edge_set(&s.test));
        prop_assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
        let union: BTreeSet<_> = tr.union(&va).chain(&te).copied().collect();
        prop_assert_eq!(union, edge_set(&all));
        for u in 0..d.num_users() {
            prop_assert!(!s.train.user_items(u).is_empty());
        }
        prop_assert_eq!(split_per_user(&d, SplitRatios::default(), seed), s);
    }

    #[test]
    fn perturbations_have_set_semantics(g in graph(8, 8), ratio in 0.0f64..0.6, seed in any::<u64>()) {
        let e = g.edge_count();
        let count = perturbation_count(ratio, e);
        let before = edge_set(&g);
        if count <= g.num_users() * g.num_items() - e {
            let inj = inject_edges(&g, ratio, seed).unwrap();
            let after = edge_set(&inj);
            prop_assert_eq!((inj.num_users(), inj.num_items()), (g.num_users(), g.num_items()));
            prop_assert_eq!(after.len(), e + count);
            prop_assert!(before.is_subset(&after));
            prop_assert_eq!(&inject_edges(&g, ratio, seed).unwrap(), &inj);
        } else {
            prop_assert!(inject_edges(&g, ratio, seed).is_err());
        }
        let dis = discard_edges(&g, ratio, seed).unwrap();
        let after = edge_set(&dis);
        prop_assert_eq!((dis.num_users(), dis.num_items()), (g.num_users(), g.num_items()));
        prop_assert_eq!(after.len(), e - count);
        prop_assert!(after.is_subset(&before));
        prop_assert_eq!(&discard_edges(&g, ratio, seed).unwrap(), &dis);
    }

    #[test]
    fn checkpoints_round_trip_bit_exact(
        variant in prop::sample::select(vec![Variant::Qgcn, Variant::QgcnQ, Variant::QgcnW, Variant::Lightgcn]),
        layers in 1usize..3,
        seed in any::<u64>(),
        scale in prop::sample::select(vec![1.0, 1e-300, 1e300, 3.0e-5]),
    ) {
        let cfg = ModelConfig { variant, layers, quaternion_dim: 2, ..ModelConfig::default() };
        let mut params = init_params(&cfg, 3, 4, seed).unwrap();
        for s in params.slices_mut() {
            s.iter_mut().for_each(|x| *x *= scale);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&path, &cfg, &params).unwrap();
        let (cfg2, loaded) = load_checkpoint(&path).unwrap();
        prop_assert_eq!(cfg2, cfg);
        for (a, b) in params.slices().iter().zip(loaded.slices()) {
            prop_assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn forward_is_deterministic(
        g in graph(5, 5),
        readout in prop::sample::select(ReadoutKind::ALL.to_vec()),
        seed in any::<u64>(),
    ) {
        let cfg = ModelConfig { layers: 2, quaternion_dim: 2, dropout: 0.3, readout, ..ModelConfig::default() };
        let params = init_params(&cfg, g.num_users(), g.num_items(), seed).unwrap();
        let adj = NormalizedAdjacency::build(&g);
        for mode in [Mode::Train, Mode::Eval] {
            let (a, _) = forward(&cfg, &params, &adj, mode, seed).unwrap();
            let (b, _) = forward(&cfg, &params, &adj, mode, seed).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn dense_transform_keeps_its_shape(seed in any::<u64>()) {
        let cfg = ModelConfig { variant: Variant::QgcnQ, quaternion_dim: 2, ..ModelConfig::default() };
        let params = init_params(&cfg, 2, 2, seed).unwrap();
        prop_assert!(matches!(params.transforms[0], Transform::Dense(_)));
        prop_assert_eq!(params.transforms[0].parameter_count(), 64);
    }
}
