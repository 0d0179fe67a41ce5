use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use universe_match::affinity::NormState;
use universe_match::datagen::{derive_pairwise_gt, generate, GenConfig, InstanceSet};
use universe_match::metrics::clustering_purity;
use universe_match::multigraph::{match_batch, mixture_pipeline, MatchSession};
use universe_match::train::{init_metric, SamplingMode, TrainConfig};
use universe_match::{Metric, UniverseMode, UniverseSpec};

fn noiseless(classes: usize, anchors: usize, per_class: usize, seed: u64) -> InstanceSet<f64> {
    generate(&GenConfig {
        class_count: classes,
        anchors_per_class: vec![anchors],
        feature_dim: 32,
        graphs_per_class: per_class,
        inlier_drop_range: [0, 0],
        outlier_count_range: [0, 0],
        feature_noise_sigma: 0.0,
        seed,
    })
    .unwrap()
}

/// Linear metric whose columns sum the planted prototypes placed in each slot.
fn planted_metric(set: &InstanceSet<f64>, spec: &UniverseSpec) -> Metric {
    let mut weight = Array2::zeros((set.feature_dim, spec.n_u()));
    let mut seen = vec![vec![false; spec.n_u()]; set.class_count()];
    for g in &set.graphs {
        for (i, anchor) in g.gt_anchors().unwrap().iter().enumerate() {
            let slot = spec.slot(g.class_id(), anchor.unwrap()).unwrap();
            if !std::mem::replace(&mut seen[g.class_id()][slot], true) {
                let mut col = weight.column_mut(slot);
                col += &(&g.features().row(i) * 40.0);
            }
        }
    }
    Metric::from_parts(weight, NormState::new(set.feature_dim), false, 1.0).unwrap()
}

fn trained_free_metric(seed: u64) -> (InstanceSet<f64>, Metric, UniverseSpec) {
    let set = generate(&GenConfig {
        class_count: 2,
        anchors_per_class: vec![6],
        feature_dim: 24,
        graphs_per_class: 10,
        inlier_drop_range: [0, 2],
        outlier_count_range: [0, 2],
        feature_noise_sigma: 0.1,
        seed,
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs: 0,
        pairs_per_epoch: 1,
        batch_size: 1,
        learning_rate: 0.0,
        momentum: 0.9,
        outlier_aware: true,
        sampling: SamplingMode::SameClass,
        universe: UniverseMode::NodeMerged,
        n_u: None,
        clamp_eps: 1e-7,
        nonlinearity: true,
        temperature: 1.0,
        holdout_fraction: 0.2,
        eval_pairs: 1,
        seed,
    };
    let (metric, spec) = init_metric(&set, &cfg).unwrap();
    (set, metric, spec)
}

#[test]
fn session_matches_batch_in_any_admission_order() {
    for seed in 0..5 {
        let (set, metric, spec) = trained_free_metric(seed);
        let batch = match_batch(&metric, &set.graphs).unwrap();
        let mut order: Vec<usize> = (0..set.graphs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut session = MatchSession::new(&metric, spec.clone()).unwrap();
        for &g in &order {
            session.add(&set.graphs[g]).unwrap();
        }
        for (x, &a) in order.iter().enumerate() {
            assert_eq!(session.assignments()[x], batch.assignments[a]);
            for (y, &b) in order.iter().enumerate() {
                assert_eq!(&session.pairwise(x, y).unwrap(), batch.pairwise(a, b).unwrap());
            }
        }
    }
}

#[test]
fn admission_cost_does_not_grow_with_session_size() {
    let (set, metric, spec) = trained_free_metric(7);
    let mut session = MatchSession::new(&metric, spec).unwrap();
    for g in &set.graphs {
        session.add(g).unwrap();
    }
    assert_eq!(session.len(), set.graphs.len());
    for cost in session.costs() {
        assert_eq!((cost.forwards, cost.hungarian_calls), (1, 1));
    }
}

#[test]
fn session_rejects_mismatched_universe() {
    let (_, metric, spec) = trained_free_metric(8);
    let wrong = UniverseSpec::new(spec.n_u() + 1, spec.mode(), spec.class_sizes().to_vec()).unwrap();
    assert!(MatchSession::new(&metric, wrong).is_err());
}

#[test]
fn planted_node_merged_metric_separates_classes() {
    let set = noiseless(3, 5, 4, 21);
    let spec = set.universe_spec(UniverseMode::NodeMerged).unwrap();
    let metric = planted_metric(&set, &spec);
    let r = mixture_pipeline(&set.graphs, &metric, 3, 0).unwrap();
    let cp: f64 = clustering_purity(&r.clusters.labels, &set.class_labels()).unwrap();
    assert_eq!(cp, 1.0);
    for a in 0..set.graphs.len() {
        for b in 0..set.graphs.len() {
            let gt = derive_pairwise_gt(&set.graphs[a], &set.graphs[b]).unwrap();
            assert_eq!(r.pairwise[a][b], gt);
        }
    }
}

#[test]
fn planted_feature_merged_metric_matches_across_classes() {
    let set = noiseless(3, 5, 4, 21);
    let node_spec = set.universe_spec(UniverseMode::NodeMerged).unwrap();
    let feat_spec = set.universe_spec(UniverseMode::FeatureMerged).unwrap();
    let node = mixture_pipeline(&set.graphs, &planted_metric(&set, &node_spec), 3, 0).unwrap();
    let feat = mixture_pipeline(&set.graphs, &planted_metric(&set, &feat_spec), 3, 0).unwrap();
    let labels = set.class_labels();
    let cross = (0..set.graphs.len())
        .flat_map(|a| (0..set.graphs.len()).map(move |b| (a, b)))
        .filter(|&(a, b)| labels[a] != labels[b])
        .any(|(a, b)| !feat.pairwise[a][b].is_empty());
    assert!(cross);
    let cp_node: f64 = clustering_purity(&node.clusters.labels, &labels).unwrap();
    let cp_feat: f64 = clustering_purity(&feat.clusters.labels, &labels).unwrap();
    assert!(cp_feat <= cp_node);
}

#[test]
fn single_cluster_mixture_equals_plain_matching() {
    let (set, metric, _) = trained_free_metric(3);
    let graphs = &set.graphs[..8];
    let r = mixture_pipeline(graphs, &metric, 1, 0).unwrap();
    assert!(r.clusters.labels.iter().all(|&l| l == 0));
    let batch = match_batch(&metric, graphs).unwrap();
    for a in 0..graphs.len() {
        for b in 0..graphs.len() {
            assert_eq!(&r.pairwise[a][b], batch.pairwise(a, b).unwrap());
        }
    }
    assert_eq!(r.within_cluster().len(), 8 * 7 / 2);
}
