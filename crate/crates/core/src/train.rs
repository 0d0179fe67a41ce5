//! Stochastic gradient descent on the universe metric.
//!
//! Pairs are drawn either within one class or, for mixture training,
//! alternately within and across classes (cross-class pairs carry an empty
//! ground truth). Gradients come straight from [`crate::loss::bce_loss`]
//! and are pushed through the metric layer by hand.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affinity::{MetricGrad, NormState, UniverseMetric};
use crate::datagen::{derive_pairwise_gt, InstanceSet};
use crate::error::{Error, Result};
use crate::graph::{Matching, UniverseMode, UniverseSpec};
use crate::io::{atomic_write, sha256_hex};
use crate::loss::{bce_loss, PairBatchItem};
use crate::metrics::f1;
use crate::scalar::Scalar;
use crate::solver::{infer_universe, outlier_filter, reconstruct_pairwise};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Both graphs from one uniformly chosen class.
    #[default]
    SameClass,
    /// Even draws within a class, odd draws across two classes.
    HalfMixed,
}

fn default_momentum() -> f64 {
    0.9
}
fn default_true() -> bool {
    true
}
fn default_eps() -> f64 {
    crate::loss::DEFAULT_CLAMP_EPS
}
fn default_temperature() -> f64 {
    1.0
}
fn default_holdout() -> f64 {
    0.2
}
fn default_eval_pairs() -> usize {
    40
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub pairs_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_true")]
    pub outlier_aware: bool,
    #[serde(default)]
    pub sampling: SamplingMode,
    pub universe: UniverseMode,
    /// Overrides the natural universe size of `universe`.
    #[serde(default)]
    pub n_u: Option<usize>,
    #[serde(default = "default_eps")]
    pub clamp_eps: f64,
    #[serde(default = "default_true")]
    pub nonlinearity: bool,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
    #[serde(default = "default_eval_pairs")]
    pub eval_pairs: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: &str| {
            Err(Error::InvalidConfig {
                field,
                reason: reason.to_string(),
            })
        };
        if self.pairs_per_epoch == 0 {
            return bad("pairs_per_epoch", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return bad("clamp_eps", "must lie in (0, 0.5)");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature", "must be positive");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction", "must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn universe_spec(&self, class_sizes: &[usize]) -> Result<UniverseSpec> {
        let natural = UniverseSpec::for_classes(self.universe, class_sizes)?;
        match self.n_u {
            Some(n_u) => UniverseSpec::new(n_u, self.universe, class_sizes.to_vec()),
            None => Ok(natural),
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// Deterministic per-purpose random streams derived from one seed.
fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

const STREAM_INIT: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_SAMPLE: u64 = 3;
const STREAM_EVAL: u64 = 4;

/// Fresh metric sized for `dataset` under `config`.
pub fn init_metric<T: Scalar>(dataset: &InstanceSet<T>, config: &TrainConfig) -> Result<(UniverseMetric<T>, UniverseSpec)> {
    config.validate()?;
    let spec = config.universe_spec(&dataset.class_sizes)?;
    let mut rng = stream(config.seed, STREAM_INIT);
    let metric = UniverseMetric::new(dataset.feature_dim, spec.n_u(), config.nonlinearity, &mut rng)?
        .with_temperature(T::lit(config.temperature))?;
    Ok((metric, spec))
}

/// Train/held-out graph indices: `round(fraction * count)` graphs of every
/// class are held out, always leaving at least two for training.
pub fn holdout_split<T: Scalar>(dataset: &InstanceSet<T>, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = stream(seed, STREAM_SPLIT);
    let mut train = Vec::new();
    let mut held = Vec::new();
    for mut members in dataset.by_class() {
        members.shuffle(&mut rng);
        let count = members.len();
        let h = ((fraction * count as f64).round() as usize).min(count.saturating_sub(2));
        held.extend_from_slice(&members[..h]);
        train.extend_from_slice(&members[h..]);
    }
    train.sort_unstable();
    held.sort_unstable();
    (train, held)
}

/// A sampled training pair: dataset indices and the derived pairwise ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPair {
    pub a: usize,
    pub b: usize,
    pub gt: Matching,
}

/// Draws `count` pairs from the graphs listed in `pool`.
pub fn sample_pairs<T: Scalar, R: Rng + ?Sized>(
    dataset: &InstanceSet<T>,
    pool: &[usize],
    mode: SamplingMode,
    count: usize,
    rng: &mut R,
) -> Result<Vec<SampledPair>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.class_count()];
    for &i in pool {
        let g = dataset.graphs.get(i).ok_or(Error::UnknownGraph(i))?;
        by_class[g.class_id()].push(i);
    }
    let pairable: Vec<usize> = (0..by_class.len()).filter(|&c| by_class[c].len() >= 2).collect();
    let populated: Vec<usize> = (0..by_class.len()).filter(|&c| !by_class[c].is_empty()).collect();
    if pairable.is_empty() {
        return Err(Error::Insufficient("no class has two graphs to pair".into()));
    }
    if mode == SamplingMode::HalfMixed && populated.len() < 2 {
        return Err(Error::Insufficient("cross-class pairs need at least two classes".into()));
    }
    let mut out = Vec::with_capacity(count);
    for draw in 0..count {
        let (a, b) = if mode == SamplingMode::HalfMixed && draw % 2 == 1 {
            let chosen: Vec<usize> = populated.choose_multiple(rng, 2).copied().collect();
            let a = *by_class[chosen[0]].choose(rng).expect("populated class");
            let b = *by_class[chosen[1]].choose(rng).expect("populated class");
            (a, b)
        } else {
            let class = *pairable.choose(rng).expect("non-empty");
            let chosen: Vec<usize> = by_class[class].choose_multiple(rng, 2).copied().collect();
            (chosen[0], chosen[1])
        };
        let gt = derive_pairwise_gt(&dataset.graphs[a], &dataset.graphs[b])?;
        out.push(SampledPair { a, b, gt });
    }
    Ok(out)
}

/// Loss and parameter gradient of one batch, in training mode.
///
/// Each item is weighted by `1 / batch.len()`. Running statistics of the
/// metric are updated by the forward pass.
pub fn batch_objective<T: Scalar>(
    metric: &mut UniverseMetric<T>,
    dataset: &InstanceSet<T>,
    batch: &[SampledPair],
    outlier_aware: bool,
    eps: T,
) -> Result<(T, MetricGrad<T>)> {
    let mut order: Vec<usize> = Vec::new();
    let position = |g: usize, order: &mut Vec<usize>| match order.iter().position(|&x| x == g) {
        Some(p) => p,
        None => {
            order.push(g);
            order.len() - 1
        }
    };
    let slots: Vec<(usize, usize)> = batch
        .iter()
        .map(|p| (position(p.a, &mut order), position(p.b, &mut order)))
        .collect();
    let views: Vec<ArrayView2<'_, T>> = order.iter().map(|&g| dataset.graphs[g].features().view()).collect();
    let (affinities, cache) = metric.forward_train(&views)?;
    let weight = T::one() / T::lit(batch.len().max(1) as f64);
    let items: Vec<PairBatchItem<'_, T>> = batch
        .iter()
        .zip(&slots)
        .map(|(p, &(sa, sb))| PairBatchItem::new(&affinities[sa], &affinities[sb], &p.gt).with_weight(weight))
        .collect();
    let out = bce_loss(&items, outlier_aware, eps)?;
    let mut raw_grads: Vec<Array2<T>> = affinities.iter().map(|s| Array2::zeros(s.raw().dim())).collect();
    for ((ga, gb), &(sa, sb)) in out.grads.iter().zip(&slots) {
        raw_grads[sa] += ga;
        raw_grads[sb] += gb;
    }
    let grad = metric.backward(&cache, &raw_grads)?;
    Ok((out.loss, grad))
}

/// SGD with momentum: `v ← μ v + g`, `θ ← θ − lr v`.
#[derive(Debug, Clone)]
pub struct MomentumSgd<T> {
    pub learning_rate: T,
    pub momentum: T,
    velocity: Option<MetricGrad<T>>,
}

impl<T: Scalar> MomentumSgd<T> {
    pub fn new(learning_rate: T, momentum: T) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: None,
        }
    }

    pub fn step(&mut self, metric: &mut UniverseMetric<T>, grad: &MetricGrad<T>) {
        let v = match self.velocity.take() {
            None => grad.clone(),
            Some(mut v) => {
                v.weight = &v.weight * self.momentum + &grad.weight;
                v.scale = &v.scale * self.momentum + &grad.scale;
                v.shift = &v.shift * self.momentum + &grad.shift;
                v
            }
        };
        metric.apply_step(&v, self.learning_rate);
        self.velocity = Some(v);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub heldout_f1: f64,
    pub heldout_precision: f64,
    pub heldout_recall: f64,
    pub outlier_absorption: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub train_graphs: Vec<usize>,
    pub heldout_graphs: Vec<usize>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub const CSV_HEADER: &'static str =
        "epoch,mean_loss,heldout_f1,heldout_precision,heldout_recall,outlier_absorption";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.mean_loss, r.heldout_f1, r.heldout_precision, r.heldout_recall, r.outlier_absorption
            ));
        }
        out
    }
}

/// Fraction of planted outliers (over `graphs`) whose row the outlier filter drops.
pub fn outlier_absorption<T: Scalar>(metric: &UniverseMetric<T>, dataset: &InstanceSet<T>, graphs: &[usize]) -> Result<f64> {
    let mut planted = 0usize;
    let mut absorbed = 0usize;
    for &g in graphs {
        let graph = &dataset.graphs[g];
        let mask = graph.outlier_mask()?;
        if !mask.contains(&true) {
            continue;
        }
        let s = metric.forward_eval(graph.features().view())?;
        let kept = outlier_filter(&s).kept;
        for (i, &is_outlier) in mask.iter().enumerate() {
            if is_outlier {
                planted += 1;
                if !kept.contains(&i) {
                    absorbed += 1;
                }
            }
        }
    }
    Ok(if planted == 0 { 1.0 } else { absorbed as f64 / planted as f64 })
}

/// Mean per-pair F1, precision and recall of the full inference pipeline.
pub fn evaluate_pairs<T: Scalar>(
    metric: &UniverseMetric<T>,
    dataset: &InstanceSet<T>,
    pairs: &[SampledPair],
) -> Result<(f64, f64, f64)> {
    if pairs.is_empty() {
        return Ok((f64::NAN, f64::NAN, f64::NAN));
    }
    let mut cache: Vec<Option<crate::solver::UniverseAssignment<T>>> = vec![None; dataset.graphs.len()];
    let mut assignment = |g: usize| -> Result<crate::solver::UniverseAssignment<T>> {
        if let Some(a) = &cache[g] {
            return Ok(a.clone());
        }
        let graph = &dataset.graphs[g];
        let a = infer_universe(&metric.forward_eval(graph.features().view())?, graph.id())?;
        cache[g] = Some(a.clone());
        Ok(a)
    };
    let (mut sf, mut sp, mut sr) = (0.0, 0.0, 0.0);
    for p in pairs {
        let pred = reconstruct_pairwise(&assignment(p.a)?, &assignment(p.b)?)?;
        let s = f1::<f64>(&pred, &p.gt)?;
        sf += s.f1;
        sp += s.precision;
        sr += s.recall;
    }
    let n = pairs.len() as f64;
    Ok((sf / n, sp / n, sr / n))
}

fn metric_is_finite<T: Scalar>(metric: &UniverseMetric<T>) -> bool {
    metric.weight().iter().all(|v| v.is_finite())
        && metric.norm().scale.iter().all(|v| v.is_finite())
        && metric.norm().shift.iter().all(|v| v.is_finite())
}

/// Runs `config.epochs` epochs starting from `metric`; deterministic given the seed.
pub fn train<T: Scalar>(
    metric: &UniverseMetric<T>,
    dataset: &InstanceSet<T>,
    config: &TrainConfig,
) -> Result<(UniverseMetric<T>, TrainHistory)> {
    config.validate()?;
    if dataset.graphs.is_empty() {
        return Err(Error::Insufficient("empty dataset".into()));
    }
    if dataset.feature_dim != metric.dim() {
        return Err(Error::DimensionMismatch {
            what: "dataset feature dimension",
            expected: metric.dim(),
            got: dataset.feature_dim,
        });
    }
    let (train_idx, held_idx) = holdout_split(dataset, config.holdout_fraction, config.seed);
    let eval_pool = if held_idx.len() >= 2 { &held_idx } else { &train_idx };
    let eval_pairs = sample_pairs(
        dataset,
        eval_pool,
        config.sampling,
        config.eval_pairs,
        &mut stream(config.seed, STREAM_EVAL),
    )
    .or_else(|_| sample_pairs(dataset, &train_idx, config.sampling, config.eval_pairs, &mut stream(config.seed, STREAM_EVAL)))?;
    let absorption_pool = if held_idx.is_empty() { &train_idx } else { &held_idx };

    let mut metric = metric.clone();
    let mut sgd = MomentumSgd::new(T::lit(config.learning_rate), T::lit(config.momentum));
    let mut rng = stream(config.seed, STREAM_SAMPLE);
    let eps = T::lit(config.clamp_eps);
    let mut history = TrainHistory {
        epochs: Vec::with_capacity(config.epochs),
        train_graphs: train_idx.clone(),
        heldout_graphs: held_idx.clone(),
    };
    for epoch in 0..config.epochs {
        let pairs = sample_pairs(dataset, &train_idx, config.sampling, config.pairs_per_epoch, &mut rng)?;
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, batch) in pairs.chunks(config.batch_size).enumerate() {
            let (loss, grad) = match batch_objective(&mut metric, dataset, batch, config.outlier_aware, eps) {
                Err(Error::NonFiniteLoss { .. }) => return Err(Error::Diverged { epoch, batch: b }),
                other => other?,
            };
            let loss = loss.to_f64_lossless();
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            sgd.step(&mut metric, &grad);
            if !metric_is_finite(&metric) {
                return Err(Error::Diverged { epoch, batch: b });
            }
            total += loss;
            batches += 1;
        }
        let (f1, precision, recall) = evaluate_pairs(&metric, dataset, &eval_pairs)?;
        history.epochs.push(EpochRecord {
            epoch,
            mean_loss: total / batches.max(1) as f64,
            heldout_f1: f1,
            heldout_precision: precision,
            heldout_recall: recall,
            outlier_absorption: outlier_absorption(&metric, dataset, absorption_pool)?,
        });
    }
    Ok((metric, history))
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormRecord {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

/// Versioned text checkpoint of a trained metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub universe: UniverseSpec,
    /// `[d, n_u]`.
    pub weight_shape: [usize; 2],
    /// Row-major.
    pub weight: Vec<f64>,
    pub norm: NormRecord,
    pub nonlinearity: bool,
    pub temperature: f64,
    pub config_hash: String,
}

fn to_vec<T: Scalar>(a: &Array1<T>) -> Vec<f64> {
    a.iter().map(|v| v.to_f64_lossless()).collect()
}

fn from_vec<T: Scalar>(v: &[f64]) -> Array1<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}

impl Checkpoint {
    pub fn from_metric<T: Scalar>(metric: &UniverseMetric<T>, universe: &UniverseSpec, config_hash: &str) -> Self {
        let norm = metric.norm();
        Self {
            format_version: CHECKPOINT_VERSION,
            universe: universe.clone(),
            weight_shape: [metric.dim(), metric.n_u()],
            weight: metric.weight().iter().map(|v| v.to_f64_lossless()).collect(),
            norm: NormRecord {
                running_mean: to_vec(&norm.running_mean),
                running_var: to_vec(&norm.running_var),
                scale: to_vec(&norm.scale),
                shift: to_vec(&norm.shift),
                momentum: norm.momentum.to_f64_lossless(),
                eps: norm.eps.to_f64_lossless(),
            },
            nonlinearity: metric.nonlinearity(),
            temperature: metric.temperature().to_f64_lossless(),
            config_hash: config_hash.to_string(),
        }
    }

    pub fn to_metric<T: Scalar>(&self) -> Result<UniverseMetric<T>> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                self.format_version
            )));
        }
        let [d, n_u] = self.weight_shape;
        if self.weight.len() != d * n_u {
            return Err(Error::DimensionMismatch {
                what: "checkpoint weight length",
                expected: d * n_u,
                got: self.weight.len(),
            });
        }
        if self.universe.n_u() != n_u {
            return Err(Error::DimensionMismatch {
                what: "checkpoint universe size",
                expected: n_u,
                got: self.universe.n_u(),
            });
        }
        let weight = Array2::from_shape_fn((d, n_u), |(i, j)| T::lit(self.weight[i * n_u + j]));
        let norm = NormState {
            running_mean: from_vec(&self.norm.running_mean),
            running_var: from_vec(&self.norm.running_var),
            scale: from_vec(&self.norm.scale),
            shift: from_vec(&self.norm.shift),
            momentum: T::lit(self.norm.momentum),
            eps: T::lit(self.norm.eps),
        };
        UniverseMetric::from_parts(weight, norm, self.nonlinearity, T::lit(self.temperature))
    }

    pub fn to_text(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_text()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}
