use std::collections::BTreeSet;

use gspt::dataset::{load_dataset, save_dataset, Dataset, Split};
use gspt::graph::{build_norm_adjacency, spmm, DenseMatrix, FeatureMatrix, Graph};
use gspt::icl::{build_augmented_graph, predict, ClassMode, IclTask};
use gspt::linkpred::mrr_from_scores;
use gspt::nn::checkpoint::{Checkpoint, ModelKind};
use gspt::nn::node_loss::{pool_nodes, recon_loss, PooledNode};
use gspt::nn::{Layout, ModelParams, ModelShape};
use gspt::partition::partition;
use gspt::rng;
use gspt::sequence::{build_sequence, MaskingConfig, NegativeMode, TokenKind};
use gspt::walk::{generate_walk, is_valid_walk, step_distribution, WalkConfig};
use proptest::prelude::*;
use rand::Rng;

fn graph_strategy(max_n: usize) -> impl Strategy<Value = Graph> {
    (1..=max_n).prop_flat_map(|n| {
        proptest::collection::vec((0..n, 0..n), 0..4 * n).prop_map(move |e| Graph::from_edges(n, e).unwrap())
    })
}

fn random_matrix(n: usize, d: usize, seed: u64) -> DenseMatrix<f64> {
    let mut r = rng::stream(seed, &[]);
    DenseMatrix::new(n, d, (0..n * d).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spmm_matches_dense_product(g in graph_strategy(64), d in 1usize..6, seed in any::<u64>()) {
        let n = g.n();
        let adj = build_norm_adjacency(&g);
        let x = random_matrix(n, d, seed);
        let mut dense = vec![0.0; n * n];
        for u in 0..n {
            for (v, w) in adj.row(u) {
                dense[u * n + v] = w;
            }
        }
        let y = spmm(&adj, &x).unwrap();
        for u in 0..n {
            for j in 0..d {
                let want: f64 = (0..n).map(|v| dense[u * n + v] * x.row(v)[j]).sum();
                prop_assert!((y.row(u)[j] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn normalized_weights_follow_degrees(g in graph_strategy(40)) {
        let adj = build_norm_adjacency(&g);
        for u in 0..g.n() {
            let mut want: BTreeSet<usize> = g.neighbors(u).iter().map(|&v| v as usize).collect();
            want.insert(u);
            let got: BTreeSet<usize> = adj.row(u).map(|(v, _)| v).collect();
            prop_assert_eq!(&got, &want);
            for (v, w) in adj.row(u) {
                let expect = 1.0 / (((g.degree(u) + 1) * (g.degree(v) + 1)) as f64).sqrt();
                prop_assert!((w - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn dataset_round_trips(g in graph_strategy(30), d in 1usize..5, seed in any::<u64>(), classes in 1u32..4) {
        let n = g.n();
        let mut r = rng::stream(seed, &[]);
        let x = FeatureMatrix::new(n, d, (0..n * d).map(|_| r.random_range(-3.0f32..3.0)).collect()).unwrap();
        let mut ds = Dataset::new(g, x).unwrap();
        // Every class keeps at least one labelled node so ids stay dense.
        ds.labels = Some((0..n).map(|u| if u < classes as usize || r.random_bool(0.7) { Some(u as u32 % classes) } else { None }).collect());
        ds.splits = Some((0..n).map(|u| [None, Some(Split::Train), Some(Split::Valid), Some(Split::Test)][(u + seed as usize) % 4]).collect());
        prop_assume!(ds.validate().is_ok());
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        prop_assert_eq!(back.graph, ds.graph);
        prop_assert_eq!(back.features.data(), ds.features.data());
        prop_assert_eq!(back.labels, ds.labels);
        prop_assert_eq!(back.splits, ds.splits);
    }

    #[test]
    fn partition_covers_every_node_once(g in graph_strategy(120), size in 1usize..40, seed in any::<u64>()) {
        let pm = partition(&g, size, seed).unwrap();
        prop_assert_eq!(pm.assignment().len(), g.n());
        prop_assert!(pm.part_sizes().iter().all(|&s| s > 0));
        prop_assert_eq!(pm.part_sizes().iter().sum::<usize>(), g.n());
        let mut seen = vec![false; g.n()];
        for p in 0..pm.num_parts() {
            for u in pm.members(p) {
                prop_assert!(!seen[u]);
                seen[u] = true;
            }
        }
        prop_assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn step_distribution_matches_enumeration(g in graph_strategy(20), p in 0.1f64..4.0, q in 0.1f64..4.0, pick in any::<(usize, usize)>()) {
        let cfg = WalkConfig::new(5, p, q).unwrap();
        let cur = pick.0 % g.n();
        prop_assume!(g.degree(cur) > 0);
        let nb = g.neighbors(cur);
        let prev = nb[pick.1 % nb.len()] as usize;
        let mut weights = Vec::new();
        for x in 0..g.n() {
            if !g.neighbors(cur).contains(&(x as u32)) {
                continue;
            }
            let prev_nbrs: Vec<u32> = g.neighbors(prev).to_vec();
            let w = if x == prev { 1.0 / p } else if prev_nbrs.contains(&(x as u32)) { 1.0 } else { 1.0 / q };
            weights.push((x, w));
        }
        let total: f64 = weights.iter().map(|w| w.1).sum();
        let got = step_distribution(&g, prev, cur, &cfg).unwrap();
        prop_assert_eq!(got.len(), weights.len());
        for ((a, pa), (b, wb)) in got.iter().zip(&weights) {
            prop_assert_eq!(a, b);
            prop_assert_eq!(*pa, wb / total);
        }
    }

    #[test]
    fn walks_step_along_edges_or_stall(g in graph_strategy(40), seed in any::<u64>(), l in 2usize..12) {
        let cfg = WalkConfig::new(l, 0.5, 2.0).unwrap();
        for s in 0..g.n() {
            let w = generate_walk(&g, s, &cfg, seed, 0);
            prop_assert_eq!(w.len(), l);
            prop_assert!(is_valid_walk(&g, &w));
            for t in 1..l {
                let (a, b) = (w.nodes[t - 1] as usize, w.nodes[t] as usize);
                prop_assert!(g.has_edge(a, b) || (a == b && g.degree(a) == 0));
            }
        }
    }

    #[test]
    fn sequences_never_target_the_suffix(l in 2usize..20, seed in any::<u64>(), mode in 0usize..3) {
        let mode = [NegativeMode::None, NegativeMode::Random, NegativeMode::Distractor][mode];
        let cfg = MaskingConfig::new(0.2, 0.2, 0.2).unwrap();
        let walk: Vec<u32> = (0..l as u32).collect();
        let pool: Vec<u32> = (100..150).collect();
        let a = build_sequence(&walk, mode, &cfg, &pool, 200, &mut rng::stream(seed, &[])).unwrap();
        let b = build_sequence(&walk, mode, &cfg, &pool, 200, &mut rng::stream(seed, &[])).unwrap();
        prop_assert_eq!(&a, &b);
        let prefix = l - a.suffix_len();
        prop_assert!(prefix >= 1 && !a.targets.is_empty());
        prop_assert!(a.targets.iter().all(|&t| t < prefix));
        prop_assert!(a.kinds[prefix..].iter().all(|&k| k == TokenKind::Distractor));
        if mode == NegativeMode::None {
            prop_assert_eq!(a.suffix_len(), 0);
        }
    }

    #[test]
    fn loss_is_bounded_and_scale_invariant(l in 2usize..10, d in 1usize..6, seed in any::<u64>(), c in 0.1f64..10.0) {
        let n = 12;
        let mut r = rng::stream(seed, &[1]);
        let walk: Vec<u32> = (0..l).map(|_| r.random_range(0..n as u32)).collect();
        let seq = build_sequence(&walk, NegativeMode::None, &MaskingConfig::new(0.5, 0.0, 0.0).unwrap(), &[0], n, &mut r).unwrap();
        let x = random_matrix(n, d, seed ^ 1);
        let out = random_matrix(l, d, seed ^ 2);
        let pooled = pool_nodes(out.data(), d, &seq.node_ids);
        let loss = recon_loss(&pooled, &seq, &x).unwrap().loss;
        prop_assert!((0.0..=2.0).contains(&loss));
        let xc = DenseMatrix::new(n, d, x.data().iter().map(|v| v * c).collect()).unwrap();
        let lc = recon_loss(&pooled, &seq, &xc).unwrap().loss;
        prop_assert!((loss - lc).abs() < 1e-12);
        let exact: Vec<PooledNode<f64>> = pooled.iter().map(|p| PooledNode { node: p.node, h: x.row(p.node as usize).to_vec(), ..p.clone() }).collect();
        prop_assert!(recon_loss(&exact, &seq, &x).unwrap().loss.abs() < 1e-12);
    }

    #[test]
    fn predictions_ignore_positive_rescaling(seed in any::<u64>(), scales in proptest::collection::vec(0.01f32..100.0, 12)) {
        let d = 4;
        let mut r = rng::stream(seed, &[]);
        let emb = FeatureMatrix::new(12, d, (0..12 * d).map(|_| r.random_range(-1.0f32..1.0)).collect()).unwrap();
        let task = IclTask { classes: vec![0, 1, 2], support: vec![vec![0], vec![1], vec![2]], queries: (3..9).collect(), query_labels: vec![0; 6] };
        let scaled = FeatureMatrix::new(12, d, emb.data().iter().enumerate().map(|(i, v)| v * scales[i / d]).collect()).unwrap();
        prop_assert_eq!(predict(&emb, &task, 9), predict(&scaled, &task, 9));
    }

    #[test]
    fn augmentation_keeps_base_edges(seed in any::<u64>(), desc in any::<bool>()) {
        let spec = gspt::synth::SynthSpec { n: 120, d: 8, ..Default::default() };
        let ds = gspt::synth::generate(&spec, seed).unwrap();
        let task = gspt::icl::sample_task(&ds, 3, 2, seed, 0).unwrap();
        let mode = if desc { ClassMode::Desc } else { ClassMode::Void };
        let (aug, x) = build_augmented_graph(&ds, &task, mode).unwrap();
        let n = ds.n();
        prop_assert_eq!(aug.n(), n + 3);
        prop_assert_eq!(x.n(), n + 3);
        let base: BTreeSet<_> = ds.graph.edges().collect();
        let kept: BTreeSet<_> = aug.edges().filter(|&(u, v)| u < n && v < n).collect();
        prop_assert_eq!(base, kept);
        for (i, sup) in task.support.iter().enumerate() {
            prop_assert_eq!(aug.degree(n + i), sup.len());
        }
    }

    #[test]
    fn mrr_is_in_unit_interval_and_ties_only_lower_it(pos in proptest::collection::vec(-5.0f64..5.0, 1..20), seed in any::<u64>(), k in 1usize..10) {
        let mut r = rng::stream(seed, &[]);
        let negs: Vec<Vec<f64>> = pos.iter().map(|_| (0..k).map(|_| r.random_range(-5.0..5.0)).collect()).collect();
        let m = mrr_from_scores(&pos, &negs);
        prop_assert!(m > 0.0 && m <= 1.0);
        let tied: Vec<Vec<f64>> = negs.iter().zip(&pos).map(|(n, &p)| { let mut n = n.clone(); n.push(p); n }).collect();
        prop_assert!(mrr_from_scores(&pos, &tied) <= m);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoints_round_trip_bit_exactly(seed in any::<u64>(), link in any::<bool>(), step in any::<u64>()) {
        let shape = ModelShape { d: 8, n_layers: 2, n_heads: 2, ffn_dim: 16, max_len: 6 };
        let (layout, kind) = if link { (Layout::link(shape).unwrap(), ModelKind::Link) } else { (Layout::node(shape).unwrap(), ModelKind::Node) };
        let params = ModelParams::<f32>::init(layout, seed);
        let ck = Checkpoint::new(kind, params, step, serde_json::json!({ "seed": seed }));
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes, std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        prop_assert_eq!(back, ck);
    }
}
