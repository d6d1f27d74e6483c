use obtree::kernels::{self, Backend, Lanes};
use obtree::{
    bin_index, binarize_block, calc_leaf_indexes, embed_features, knn_search, l2_sqr_distance, load_model,
    predict_batch, save_model, EmbeddingCorpus, Ensemble, FloatFeatureBorders, ObliviousTree, PredictOptions,
    Profiler, RawBlock, ScopeStats, Split,
};
use proptest::prelude::*;

fn backend() -> impl Strategy<Value = Backend> {
    prop_oneof![
        Just(Backend::Scalar),
        prop::sample::select(Lanes::ALL.to_vec()).prop_map(Backend::Vectorized),
    ]
}

fn borders() -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-4.0f32..4.0, 0..40).prop_map(|mut b| {
        b.sort_by(f32::total_cmp);
        b.dedup();
        b
    })
}

/// Small random ensembles with optionally integer-valued leaves.
fn ensemble(integer_leaves: bool) -> impl Strategy<Value = Ensemble> {
    (1usize..8, 1usize..4, prop::bool::ANY).prop_flat_map(move |(n_features, n_dims, scaled)| {
        let feature_borders = prop::collection::vec(borders(), n_features);
        let trees = prop::collection::vec((1usize..7, any::<u64>()), 1..25);
        (feature_borders, trees).prop_map(move |(fb, trees)| {
            let borders: Vec<FloatFeatureBorders> = fb
                .into_iter()
                .enumerate()
                .map(|(feature_index, borders)| FloatFeatureBorders { feature_index, borders })
                .collect();
            let trees = trees
                .into_iter()
                .map(|(depth, seed)| {
                    let mut s = seed;
                    let mut next = move || {
                        s ^= s << 13;
                        s ^= s >> 7;
                        s ^= s << 17;
                        s
                    };
                    let splits = (0..depth)
                        .map(|_| {
                            let feature = (next() % n_features as u64) as usize;
                            let n = borders[feature].borders.len() as u64;
                            Split { feature, border_bin: (next() % (n + 1)) as u8 }
                        })
                        .collect();
                    let leaves = (0..(1 << depth) * n_dims)
                        .map(|_| {
                            let v = (next() % 2001) as f64 - 1000.0;
                            if integer_leaves { v } else { v / 997.0 }
                        })
                        .collect();
                    ObliviousTree::new(splits, leaves)
                })
                .collect();
            let scale = if scaled { 0.5 } else { 1.0 };
            Ensemble::with_affine(n_features, n_dims, borders.clone(), trees, scale, vec![0.25; n_dims]).unwrap()
        })
    })
}

fn samples_for(n_features: usize) -> impl Strategy<Value = Vec<f32>> {
    (1usize..300).prop_flat_map(move |n| {
        prop::collection::vec(
            prop_oneof![8 => -5.0f32..5.0, 1 => Just(f32::NAN), 1 => Just(0.0f32)],
            n * n_features,
        )
    })
}

fn with_samples(integer_leaves: bool) -> impl Strategy<Value = (Ensemble, Vec<f32>)> {
    ensemble(integer_leaves).prop_flat_map(|e| {
        let n = e.n_features();
        (Just(e), samples_for(n))
    })
}

fn raw_bits(e: &Ensemble, x: &[f32], options: &PredictOptions) -> Vec<u64> {
    predict_batch(e, x, options)
        .unwrap()
        .predictions
        .raw()
        .iter()
        .map(|v| v.to_bits())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn prediction_ignores_backend_workers_and_block_size(
        (e, x) in with_samples(false),
        b in backend(),
        workers in 1usize..5,
        block_size in 1usize..200,
    ) {
        let base = raw_bits(&e, &x, &PredictOptions::default());
        let other = raw_bits(&e, &x, &PredictOptions { backend: b, workers, block_size, ..PredictOptions::default() });
        prop_assert_eq!(base, other);
    }

    #[test]
    fn integer_leaves_make_tree_order_irrelevant((e, x) in with_samples(true), rotate in 0usize..25) {
        let mut trees = e.trees().to_vec();
        let k = rotate % trees.len();
        trees.rotate_left(k);
        trees.reverse();
        let permuted = Ensemble::with_affine(
            e.n_features(), e.n_dims(), e.borders().to_vec(), trees, e.scale(), e.bias().to_vec(),
        ).unwrap();
        let options = PredictOptions::default();
        prop_assert_eq!(raw_bits(&e, &x, &options), raw_bits(&permuted, &x, &options));
    }

    #[test]
    fn leaf_indexes_are_bounded((e, x) in with_samples(false), b in backend()) {
        let schema = e.dense_borders();
        let raw = RawBlock::new(&x, e.n_features()).unwrap();
        let block = binarize_block(&raw, &schema, b).unwrap();
        prop_assert_eq!(block.nan_count(), x.iter().filter(|v| v.is_nan()).count());
        for f in 0..e.n_features() {
            for s in 0..block.n_samples() {
                let bin = block.bin(f, s);
                prop_assert_eq!(bin, bin_index(x[s * e.n_features() + f], schema[f]));
                prop_assert!(usize::from(bin) <= schema[f].len());
            }
        }
        for tree in e.trees() {
            let idx = calc_leaf_indexes(&block, tree, b);
            prop_assert!(idx.iter().all(|&i| (i as usize) < tree.leaf_count()));
        }
    }

    #[test]
    fn save_load_is_identity(e in ensemble(false)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&e, &path).unwrap();
        prop_assert_eq!(load_model(&path).unwrap(), e);
    }

    #[test]
    fn calc_indexes_only_sets_bits(
        bins in prop::collection::vec(any::<u8>(), 0..100),
        thresholds in prop::collection::vec(any::<u8>(), 1..6),
        b in backend(),
    ) {
        let mut acc = vec![0u32; bins.len()];
        for (level, &t) in thresholds.iter().enumerate() {
            let before = acc.clone();
            kernels::calc_indexes(b, &bins, t, level as u32, &mut acc);
            for (a, prev) in acc.iter().zip(&before) {
                prop_assert_eq!(a & prev, *prev);
            }
        }
        for (s, &a) in acc.iter().enumerate() {
            let expected: u32 = thresholds
                .iter()
                .enumerate()
                .map(|(level, &t)| u32::from(bins[s] >= t) << level)
                .sum();
            prop_assert_eq!(a, expected);
        }
    }

    #[test]
    fn l2_is_symmetric_and_nonnegative(
        pair in (0usize..600).prop_flat_map(|n| (
            prop::collection::vec(-100.0f32..100.0, n),
            prop::collection::vec(-100.0f32..100.0, n),
        )),
        b in backend(),
    ) {
        let (a, c) = pair;
        let ab = l2_sqr_distance(&a, &c, b).unwrap();
        let ba = l2_sqr_distance(&c, &a, b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
        prop_assert_eq!(l2_sqr_distance(&a, &a, b).unwrap(), 0.0);
        let scalar = l2_sqr_distance(&a, &c, Backend::Scalar).unwrap();
        prop_assert!((ab - scalar).abs() <= 1e-5 * scalar.abs().max(1e-30));
    }

    #[test]
    fn knn_results_sorted_and_consistent(
        dim in 1usize..20,
        n in 1usize..80,
        seed in any::<u64>(),
        k_frac in 0.0f64..1.0,
        b in backend(),
    ) {
        let (corpus, queries) = obtree::knn::gen_synthetic_embeddings(seed, n, 1, dim, 3).unwrap();
        let q = queries.item(0);
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let got = knn_search(q, &corpus, k, b).unwrap();
        prop_assert_eq!(got.len(), k);
        prop_assert!(got.windows(2).all(|w| w[0].distance <= w[1].distance));
        for nb in &got {
            prop_assert_eq!(nb.distance.to_bits(), l2_sqr_distance(q, corpus.item(nb.index), b).unwrap().to_bits());
        }
        let f = embed_features(q, &corpus, k, 3, b).unwrap();
        prop_assert_eq!(f.len(), 4);
        let counts: Vec<usize> = got.iter().fold(vec![0; 3], |mut c, nb| {
            c[corpus.labels()[nb.index]] += 1;
            c
        });
        prop_assert_eq!(counts.iter().sum::<usize>(), k);
        for (share, count) in f.iter().zip(&counts) {
            prop_assert_eq!(*share, *count as f32 / k as f32);
        }
    }

    #[test]
    fn knn_backend_invariant_on_separated_corpora(
        points in prop::collection::btree_set(0u16..2000, 2..60),
        seed in any::<u64>(),
        b in backend(),
    ) {
        // Points on a line at integer multiples of 0.01, query at the origin
        // shifted by a fraction of the spacing: all gaps are far above 1e-4.
        let shift = (seed % 7) as f32 * 1e-3 + 1e-3;
        let xs: Vec<u16> = points.into_iter().collect();
        let vectors: Vec<f32> = xs.iter().flat_map(|&x| [x as f32 * 0.01 + shift, 0.0]).collect();
        let corpus = EmbeddingCorpus::new(vectors, 2, vec![0; xs.len()], 1).unwrap();
        let k = xs.len().min(10);
        let scalar: Vec<usize> = knn_search(&[0.0, 0.0], &corpus, k, Backend::Scalar).unwrap().iter().map(|n| n.index).collect();
        let other: Vec<usize> = knn_search(&[0.0, 0.0], &corpus, k, b).unwrap().iter().map(|n| n.index).collect();
        prop_assert_eq!(scalar, other);
    }

    #[test]
    fn profiler_counts_and_closure(ops in prop::collection::vec(0u8..4, 0..200)) {
        const NAMES: [&str; 3] = ["a", "b", "c"];
        let mut p = Profiler::enabled();
        let mut open: Vec<&'static str> = Vec::new();
        let mut entered = std::collections::HashMap::<Vec<&str>, u64>::new();
        for op in ops {
            if op == 3 || open.len() >= 4 {
                if let Some(name) = open.pop() {
                    p.exit(name);
                }
            } else {
                let name = NAMES[op as usize];
                open.push(name);
                *entered.entry(open.clone()).or_default() += 1;
                p.enter(name);
            }
        }
        while let Some(name) = open.pop() {
            p.exit(name);
        }
        let report = p.report().unwrap();
        fn walk(node: &ScopeStats, path: &mut Vec<String>, out: &mut Vec<(Vec<String>, u64)>) -> Result<(), TestCaseError> {
            path.push(node.name.clone());
            out.push((path.clone(), node.call_count));
            prop_assert!(node.children_total_ns() <= node.total_ns);
            for c in &node.children {
                walk(c, path, out)?;
            }
            path.pop();
            Ok(())
        }
        let mut seen = Vec::new();
        for root in &report.roots {
            walk(root, &mut Vec::new(), &mut seen)?;
        }
        prop_assert_eq!(seen.len(), entered.len());
        for (path, count) in seen {
            let key: Vec<&str> = path.iter().map(String::as_str).collect();
            prop_assert_eq!(entered.get(&key).copied(), Some(count), "path {:?}", key);
        }
    }
}

#[test]
fn disabled_profiler_records_nothing() {
    let mut p = Profiler::disabled();
    p.scope("x", |p| p.scope("y", |_| ()));
    let r = p.report().unwrap();
    assert!(r.is_empty());
    assert!(r.rows.is_empty());
}
