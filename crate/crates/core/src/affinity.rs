//! Universe metric layer: node features to node-to-anchor affinities.
//!
//! `raw = relu(norm(F)) · M` (or `F · M` with the nonlinearity disabled) and
//! `prob = softmax(raw / τ)` row by row. The last anchor column is the
//! absorbing node.

use std::cell::Cell;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

thread_local! {
    static FORWARD_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of graphs pushed through a metric forward pass on this thread.
pub fn forward_calls() -> u64 {
    FORWARD_CALLS.with(Cell::get)
}

fn count_forwards(n: usize) {
    FORWARD_CALLS.with(|c| c.set(c.get() + n as u64));
}

pub const DEFAULT_NORM_MOMENTUM: f64 = 0.9;
pub const DEFAULT_NORM_EPS: f64 = 1e-5;

/// Per-channel standardization state.
///
/// Running statistics follow `running = momentum * running + (1 - momentum) * batch`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormState<T> {
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
    pub scale: Array1<T>,
    pub shift: Array1<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Scalar> NormState<T> {
    pub fn new(d: usize) -> Self {
        Self {
            running_mean: Array1::zeros(d),
            running_var: Array1::ones(d),
            scale: Array1::ones(d),
            shift: Array1::zeros(d),
            momentum: T::lit(DEFAULT_NORM_MOMENTUM),
            eps: T::lit(DEFAULT_NORM_EPS),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniverseMetric<T> {
    weight: Array2<T>,
    norm: NormState<T>,
    nonlinearity: bool,
    temperature: T,
}

/// Gradient with respect to the learnable parameters of a [`UniverseMetric`].
#[derive(Debug, Clone, PartialEq)]
pub struct MetricGrad<T> {
    pub weight: Array2<T>,
    pub scale: Array1<T>,
    pub shift: Array1<T>,
}

impl<T: Scalar> MetricGrad<T> {
    pub fn zeros(d: usize, n_u: usize) -> Self {
        Self {
            weight: Array2::zeros((d, n_u)),
            scale: Array1::zeros(d),
            shift: Array1::zeros(d),
        }
    }
}

/// Intermediate values kept from a training forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    graphs: Vec<GraphCache<T>>,
}

#[derive(Debug, Clone)]
struct GraphCache<T> {
    hidden: Array2<T>,
    /// Standardized input and pre-activation, present when the nonlinearity is on.
    normalized: Option<(Array2<T>, Array2<T>)>,
}

impl<T: Scalar> UniverseMetric<T> {
    /// Fresh metric with `M ~ N(0, 1/d)` entries.
    pub fn new<R: Rng + ?Sized>(d: usize, n_u: usize, nonlinearity: bool, rng: &mut R) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidConfig {
                field: "feature_dim",
                reason: "must be positive".into(),
            });
        }
        if n_u < 2 {
            return Err(Error::InvalidConfig {
                field: "n_u",
                reason: format!("need at least 2 anchors, got {n_u}"),
            });
        }
        let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid std");
        let weight = Array2::from_shape_simple_fn((d, n_u), || T::lit(normal.sample(rng)));
        Ok(Self {
            weight,
            norm: NormState::new(d),
            nonlinearity,
            temperature: T::one(),
        })
    }

    pub fn from_parts(
        weight: Array2<T>,
        norm: NormState<T>,
        nonlinearity: bool,
        temperature: T,
    ) -> Result<Self> {
        let (d, n_u) = weight.dim();
        if n_u < 2 || d == 0 {
            return Err(Error::InvalidConfig {
                field: "weight",
                reason: format!("shape {d}x{n_u} needs d >= 1 and n_u >= 2"),
            });
        }
        for (what, len) in [
            ("running_mean", norm.running_mean.len()),
            ("running_var", norm.running_var.len()),
            ("scale", norm.scale.len()),
            ("shift", norm.shift.len()),
        ] {
            if len != d {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: d,
                    got: len,
                });
            }
        }
        if norm.running_var.iter().any(|v| !(*v > T::zero())) {
            return Err(Error::InvalidConfig {
                field: "running_var",
                reason: "entries must be positive".into(),
            });
        }
        if let Some(((row, col), _)) = weight.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "metric weight",
                row,
                col,
            });
        }
        if !(temperature > T::zero()) {
            return Err(Error::InvalidConfig {
                field: "temperature",
                reason: "must be positive".into(),
            });
        }
        Ok(Self {
            weight,
            norm,
            nonlinearity,
            temperature,
        })
    }

    pub fn with_temperature(mut self, temperature: T) -> Result<Self> {
        if !(temperature > T::zero()) {
            return Err(Error::InvalidConfig {
                field: "temperature",
                reason: "must be positive".into(),
            });
        }
        self.temperature = temperature;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.weight.ncols()
    }

    pub fn weight(&self) -> &Array2<T> {
        &self.weight
    }

    pub fn norm(&self) -> &NormState<T> {
        &self.norm
    }

    pub fn nonlinearity(&self) -> bool {
        self.nonlinearity
    }

    pub fn temperature(&self) -> T {
        self.temperature
    }

    fn check_features(&self, features: ArrayView2<'_, T>) -> Result<()> {
        if features.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "feature dimension",
                expected: self.dim(),
                got: features.ncols(),
            });
        }
        if features.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                what: "node count",
                expected: 1,
                got: 0,
            });
        }
        if let Some(((row, col), _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "features",
                row,
                col,
            });
        }
        Ok(())
    }

    fn standardize(&self, features: ArrayView2<'_, T>, mean: &Array1<T>, var: &Array1<T>) -> (Array2<T>, Array2<T>) {
        let inv_std = var.mapv(|v| T::one() / (v + self.norm.eps).sqrt());
        let xhat = (&features - mean) * &inv_std;
        let pre = &xhat * &self.norm.scale + &self.norm.shift;
        (xhat, pre)
    }

    fn finish(&self, hidden: &Array2<T>) -> UniverseAffinity<T> {
        UniverseAffinity::from_raw(hidden.dot(&self.weight), self.temperature)
    }

    /// Evaluation-mode forward pass: uses running statistics, mutates nothing.
    pub fn forward_eval(&self, features: ArrayView2<'_, T>) -> Result<UniverseAffinity<T>> {
        self.check_features(features)?;
        count_forwards(1);
        let hidden = if self.nonlinearity {
            let (_, pre) = self.standardize(features, &self.norm.running_mean, &self.norm.running_var);
            pre.mapv(relu)
        } else {
            features.to_owned()
        };
        Ok(self.finish(&hidden))
    }

    /// Training-mode forward pass over a batch of graphs.
    ///
    /// Normalization uses statistics of all nodes in the batch and folds them
    /// into the running statistics.
    pub fn forward_train(
        &mut self,
        batch: &[ArrayView2<'_, T>],
    ) -> Result<(Vec<UniverseAffinity<T>>, ForwardCache<T>)> {
        for f in batch {
            self.check_features(*f)?;
        }
        count_forwards(batch.len());
        if !self.nonlinearity {
            let mut out = Vec::with_capacity(batch.len());
            let mut graphs = Vec::with_capacity(batch.len());
            for f in batch {
                let hidden = f.to_owned();
                out.push(self.finish(&hidden));
                graphs.push(GraphCache {
                    hidden,
                    normalized: None,
                });
            }
            return Ok((out, ForwardCache { graphs }));
        }

        let d = self.dim();
        let total: usize = batch.iter().map(|f| f.nrows()).sum();
        let count = T::lit(total as f64);
        let mut mean = Array1::<T>::zeros(d);
        for f in batch {
            mean += &f.sum_axis(Axis(0));
        }
        mean /= count;
        let mut var = Array1::<T>::zeros(d);
        for f in batch {
            var += &(f - &mean).mapv(|v| v * v).sum_axis(Axis(0));
        }
        var /= count;

        let unbiased = if total > 1 {
            var.mapv(|v| v * count / (count - T::one()))
        } else {
            var.clone()
        };
        let momentum = self.norm.momentum;
        let keep = T::one() - momentum;
        Zip::from(&mut self.norm.running_mean)
            .and(&mean)
            .for_each(|r, &b| *r = momentum * *r + keep * b);
        Zip::from(&mut self.norm.running_var)
            .and(&unbiased)
            .for_each(|r, &b| *r = momentum * *r + keep * b);

        let mut out = Vec::with_capacity(batch.len());
        let mut graphs = Vec::with_capacity(batch.len());
        for f in batch {
            let (xhat, pre) = self.standardize(*f, &mean, &var);
            let hidden = pre.mapv(relu);
            out.push(self.finish(&hidden));
            graphs.push(GraphCache {
                hidden,
                normalized: Some((xhat, pre)),
            });
        }
        Ok((out, ForwardCache { graphs }))
    }

    /// Backpropagates `∂L/∂raw` for every graph of a training batch.
    ///
    /// Batch statistics depend only on the (constant) input features, so no
    /// gradient flows through them.
    pub fn backward(&self, cache: &ForwardCache<T>, raw_grads: &[Array2<T>]) -> Result<MetricGrad<T>> {
        if cache.graphs.len() != raw_grads.len() {
            return Err(Error::DimensionMismatch {
                what: "backward batch size",
                expected: cache.graphs.len(),
                got: raw_grads.len(),
            });
        }
        let mut grad = MetricGrad::zeros(self.dim(), self.n_u());
        for (g, d_raw) in cache.graphs.iter().zip(raw_grads) {
            if d_raw.dim() != (g.hidden.nrows(), self.n_u()) {
                return Err(Error::DimensionMismatch {
                    what: "raw gradient rows",
                    expected: g.hidden.nrows(),
                    got: d_raw.nrows(),
                });
            }
            grad.weight += &g.hidden.t().dot(d_raw);
            if let Some((xhat, pre)) = &g.normalized {
                let mut d_pre = d_raw.dot(&self.weight.t());
                Zip::from(&mut d_pre).and(pre).for_each(|dp, &p| {
                    if p <= T::zero() {
                        *dp = T::zero();
                    }
                });
                grad.shift += &d_pre.sum_axis(Axis(0));
                grad.scale += &(&d_pre * xhat).sum_axis(Axis(0));
            }
        }
        Ok(grad)
    }

    /// `θ ← θ − lr · step` for every learnable parameter.
    pub fn apply_step(&mut self, step: &MetricGrad<T>, lr: T) {
        self.weight.scaled_add(-lr, &step.weight);
        if self.nonlinearity {
            self.norm.scale.scaled_add(-lr, &step.scale);
            self.norm.shift.scaled_add(-lr, &step.shift);
        }
    }
}

fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// Single-graph forward in the requested mode.
pub fn forward<T: Scalar>(
    metric: &mut UniverseMetric<T>,
    features: ArrayView2<'_, T>,
    training: bool,
) -> Result<UniverseAffinity<T>> {
    if training {
        let (mut out, _) = metric.forward_train(&[features])?;
        Ok(out.pop().expect("one graph in, one affinity out"))
    } else {
        metric.forward_eval(features)
    }
}

/// Node-to-anchor scores and their row-wise softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct UniverseAffinity<T> {
    raw: Array2<T>,
    prob: Array2<T>,
    temperature: T,
}

impl<T: Scalar> UniverseAffinity<T> {
    pub fn from_raw(raw: Array2<T>, temperature: T) -> Self {
        let prob = row_softmax(raw.view(), temperature);
        Self {
            raw,
            prob,
            temperature,
        }
    }

    /// Wraps an explicit row-stochastic matrix; `raw` becomes its (floored) logarithm.
    pub fn from_prob(prob: Array2<T>) -> Result<Self> {
        if prob.ncols() < 2 {
            return Err(Error::DimensionMismatch {
                what: "anchor count",
                expected: 2,
                got: prob.ncols(),
            });
        }
        let tol = T::lit(1e-9).max(T::epsilon() * T::lit(64.0));
        for (i, row) in prob.outer_iter().enumerate() {
            if let Some(j) = row.iter().position(|p| !p.is_finite() || *p < T::zero()) {
                return Err(Error::NegativeEntry {
                    what: "probability",
                    row: i,
                    col: j,
                });
            }
            let sum: T = row.sum();
            if (sum - T::one()).abs() > tol {
                return Err(Error::InvalidConfig {
                    field: "prob",
                    reason: format!("row {i} sums to {sum}"),
                });
            }
        }
        let floor = T::min_positive_value().ln();
        let raw = prob.mapv(|p| if p > T::zero() { p.ln() } else { floor });
        Ok(Self {
            raw,
            prob,
            temperature: T::one(),
        })
    }

    pub fn raw(&self) -> &Array2<T> {
        &self.raw
    }

    pub fn prob(&self) -> &Array2<T> {
        &self.prob
    }

    pub fn temperature(&self) -> T {
        self.temperature
    }

    pub fn n(&self) -> usize {
        self.prob.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.prob.ncols()
    }

    pub fn absorbing(&self) -> usize {
        self.n_u() - 1
    }
}

pub fn row_softmax<T: Scalar>(raw: ArrayView2<'_, T>, temperature: T) -> Array2<T> {
    let mut out = raw.mapv(|v| v / temperature);
    for mut row in out.outer_iter_mut() {
        let max = row.fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum: T = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn check_same_universe<T: Scalar>(sa: &UniverseAffinity<T>, sb: &UniverseAffinity<T>) -> Result<()> {
    if sa.n_u() != sb.n_u() {
        return Err(Error::DimensionMismatch {
            what: "universe size",
            expected: sa.n_u(),
            got: sb.n_u(),
        });
    }
    Ok(())
}

/// Pairwise affinity `p^a (p^b)^T` reconstructed from two universe affinities.
pub fn pairwise_affinity<T: Scalar>(sa: &UniverseAffinity<T>, sb: &UniverseAffinity<T>) -> Result<Array2<T>> {
    check_same_universe(sa, sb)?;
    Ok(sa.prob.dot(&sb.prob.t()))
}

/// Same reconstruction on the raw scores, `S_a S_b^T`.
pub fn pairwise_affinity_raw<T: Scalar>(
    sa: &UniverseAffinity<T>,
    sb: &UniverseAffinity<T>,
) -> Result<Array2<T>> {
    check_same_universe(sa, sb)?;
    Ok(sa.raw.dot(&sb.raw.t()))
}

/// Position of `(i, k)` in the column-major vectorization of an `rows x _` matrix.
pub fn vec_index(rows: usize, i: usize, k: usize) -> usize {
    k * rows + i
}

/// Affinity matrix `K^u` with `K[(i,k),(j,l)] = s(i,k) s(j,l)` (diagonal `s(i,k)^2`).
pub fn build_ku<T: Scalar>(s_ab: ArrayView2<'_, T>) -> Result<Array2<T>> {
    let (na, nb) = s_ab.dim();
    if let Some(((row, col), _)) = s_ab.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "pairwise affinity",
            row,
            col,
        });
    }
    if let Some(((row, col), _)) = s_ab.indexed_iter().find(|(_, v)| **v < T::zero()) {
        return Err(Error::NegativeEntry {
            what: "pairwise affinity",
            row,
            col,
        });
    }
    let mut v = Array1::zeros(na * nb);
    for ((i, k), &s) in s_ab.indexed_iter() {
        v[vec_index(na, i, k)] = s;
    }
    let column = v.view().insert_axis(Axis(1));
    let row = v.view().insert_axis(Axis(0));
    Ok(column.dot(&row))
}

/// Quadratic assignment objective `vec(X)^T K vec(X)`.
pub fn qap_score<T: Scalar>(k: ArrayView2<'_, T>, x: &crate::graph::Matching) -> Result<T> {
    let (na, nb) = x.shape();
    let size = na * nb;
    if k.dim() != (size, size) {
        return Err(Error::DimensionMismatch {
            what: "affinity matrix size",
            expected: size,
            got: k.nrows(),
        });
    }
    let active: Vec<usize> = x.pairs().map(|(i, j)| vec_index(na, i, j)).collect();
    let mut total = T::zero();
    for &p in &active {
        for &q in &active {
            total += k[[p, q]];
        }
    }
    Ok(total)
}
