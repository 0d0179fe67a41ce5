use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use universe_match::datagen::{generate, GenConfig, InstanceSet};
use universe_match::train::{
    batch_objective, init_metric, sample_pairs, train, Checkpoint, SamplingMode, TrainConfig,
};
use universe_match::{Error, Metric, UniverseMode};

fn dataset(sigma: f64, drop: usize, outliers: usize, seed: u64) -> InstanceSet<f64> {
    generate(&GenConfig {
        class_count: 3,
        anchors_per_class: vec![6],
        feature_dim: 64,
        graphs_per_class: 8,
        inlier_drop_range: [0, drop],
        outlier_count_range: [0, outliers],
        feature_noise_sigma: sigma,
        seed,
    })
    .unwrap()
}

fn config(epochs: usize, lr: f64, nonlinearity: bool) -> TrainConfig {
    TrainConfig {
        epochs,
        pairs_per_epoch: 128,
        batch_size: 8,
        learning_rate: lr,
        momentum: 0.9,
        outlier_aware: true,
        sampling: SamplingMode::SameClass,
        universe: UniverseMode::FeatureMerged,
        n_u: None,
        clamp_eps: 1e-7,
        nonlinearity,
        temperature: 1.0,
        holdout_fraction: 0.2,
        eval_pairs: 20,
        seed: 9,
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let set = dataset(0.05, 1, 1, 1);
    for nonlinearity in [false, true] {
        let cfg = config(3, 0.0, nonlinearity);
        let (m0, _) = init_metric(&set, &cfg).unwrap();
        let (m1, hist) = train(&m0, &set, &cfg).unwrap();
        assert_eq!(m1.weight(), m0.weight());
        assert_eq!(m1.norm().scale, m0.norm().scale);
        assert_eq!(m1.norm().shift, m0.norm().shift);
        if !nonlinearity {
            assert_eq!(m1, m0);
            let first = hist.epochs[0];
            for r in &hist.epochs {
                assert_eq!(r.heldout_f1, first.heldout_f1);
                assert_eq!(r.outlier_absorption, first.outlier_absorption);
            }
        }
    }
}

#[test]
fn same_seed_gives_identical_history() {
    let set = dataset(0.05, 1, 1, 2);
    let cfg = config(3, 0.02, true);
    let (m0, _) = init_metric(&set, &cfg).unwrap();
    let (a, ha) = train(&m0, &set, &cfg).unwrap();
    let (b, hb) = train(&m0, &set, &cfg).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(a, b);
    assert_eq!(ha.to_csv(), hb.to_csv());
}

#[test]
fn small_step_decreases_frozen_batch_loss() {
    let set = dataset(0.1, 2, 2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pool: Vec<usize> = (0..set.graphs.len()).collect();
    for trial in 0..10u64 {
        let cfg = TrainConfig { seed: trial, ..config(1, 1e-4, trial % 2 == 0) };
        let (mut metric, _) = init_metric(&set, &cfg).unwrap();
        let batch = sample_pairs(&set, &pool, SamplingMode::HalfMixed, 8, &mut rng).unwrap();
        let (before, grad) = batch_objective(&mut metric, &set, &batch, true, 1e-7).unwrap();
        metric.apply_step(&grad, 1e-4);
        let (after, _) = batch_objective(&mut metric, &set, &batch, true, 1e-7).unwrap();
        assert!(after < before, "trial {trial}: {after} >= {before}");
    }
}

#[test]
fn noiseless_separable_data_is_learned_within_twenty_epochs() {
    let set = dataset(0.0, 0, 0, 5);
    let cfg = TrainConfig { pairs_per_epoch: 256, ..config(20, 0.02, true) };
    let (m0, _) = init_metric(&set, &cfg).unwrap();
    let (_, hist) = train(&m0, &set, &cfg).unwrap();
    assert_eq!(hist.epochs.len(), 20);
    let f1 = hist.last().unwrap().heldout_f1;
    assert!(f1 >= 0.99, "held-out F1 {f1}");
}

#[test]
fn same_class_draws_are_uniform_over_classes() {
    let set = dataset(0.05, 0, 0, 6);
    let pool: Vec<usize> = (0..set.graphs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 10_000;
    let pairs = sample_pairs(&set, &pool, SamplingMode::SameClass, n, &mut rng).unwrap();
    let mut counts = [0usize; 3];
    for p in &pairs {
        let (ca, cb) = (set.graphs[p.a].class_id(), set.graphs[p.b].class_id());
        assert_eq!(ca, cb);
        assert_ne!(p.a, p.b);
        counts[ca] += 1;
    }
    let p = 1.0 / 3.0;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sd, "{counts:?}");
    }
}

#[test]
fn half_mixed_draws_alternate() {
    let set = dataset(0.05, 0, 0, 8);
    let pool: Vec<usize> = (0..set.graphs.len()).collect();
    let pairs = sample_pairs(&set, &pool, SamplingMode::HalfMixed, 10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let cross: Vec<_> = pairs
        .iter()
        .filter(|p| set.graphs[p.a].class_id() != set.graphs[p.b].class_id())
        .collect();
    assert_eq!(cross.len(), 5);
    assert!(cross.iter().all(|p| p.gt.is_empty()));

    let one_class = set.subset(&[0, 1, 2]);
    let pool = [0, 1, 2];
    assert!(sample_pairs(&one_class, &pool, SamplingMode::SameClass, 5, &mut ChaCha8Rng::seed_from_u64(1)).is_ok());
    assert!(matches!(
        sample_pairs(&one_class, &pool, SamplingMode::HalfMixed, 5, &mut ChaCha8Rng::seed_from_u64(1)),
        Err(Error::Insufficient(_))
    ));
}

#[test]
fn overflowing_affinities_report_divergence() {
    let set = dataset(0.05, 1, 1, 9);
    let cfg = config(2, 0.02, false);
    let (m0, _) = init_metric(&set, &cfg).unwrap();
    let huge = m0.weight().mapv(|_| f64::MAX);
    let m0 = Metric::from_parts(huge, m0.norm().clone(), false, 1.0).unwrap();
    match train(&m0, &set, &cfg) {
        Err(Error::Diverged { epoch, batch }) => assert_eq!((epoch, batch), (0, 0)),
        other => panic!("expected divergence, got {:?}", other.map(|(_, h)| h)),
    }
}

#[test]
fn checkpoint_reloads_the_trained_metric() {
    let set = dataset(0.05, 1, 1, 10);
    let cfg = config(2, 0.02, true);
    let (m0, spec) = init_metric(&set, &cfg).unwrap();
    let (m1, _) = train(&m0, &set, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    Checkpoint::from_metric(&m1, &spec, &cfg.hash()).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.to_metric::<f64>().unwrap(), m1);
    assert_eq!(loaded.universe, spec);
    assert_eq!(loaded.config_hash, cfg.hash());
}
