//! Matching probabilities and binary cross-entropy on reconstructed pairs.
//!
//! The pair probability is `p_ij = Σ_k p^a_ik p^b_jk`. The outlier-aware
//! variant drops the absorbing anchor from the sum, so a pair of nodes that
//! both sit on the absorbing node has probability zero of matching.
//!
//! [`bce_loss`] returns the exact gradient of the loss it computes
//! (probabilities clamped to `[ε, 1 − ε]`, zero slope where the clamp is
//! active). The per-term closed forms below are kept for cross-checking.

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;

use crate::affinity::UniverseAffinity;
use crate::error::{Error, Result};
use crate::graph::Matching;
use crate::scalar::Scalar;

pub const DEFAULT_CLAMP_EPS: f64 = 1e-7;

/// One training pair: two universe affinities and their pairwise ground truth.
#[derive(Debug, Clone, Copy)]
pub struct PairBatchItem<'a, T> {
    pub sa: &'a UniverseAffinity<T>,
    pub sb: &'a UniverseAffinity<T>,
    pub gt: &'a Matching,
    pub weight: T,
}

impl<'a, T: Scalar> PairBatchItem<'a, T> {
    pub fn new(sa: &'a UniverseAffinity<T>, sb: &'a UniverseAffinity<T>, gt: &'a Matching) -> Self {
        Self {
            sa,
            sb,
            gt,
            weight: T::one(),
        }
    }

    pub fn with_weight(mut self, weight: T) -> Self {
        self.weight = weight;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.sa.n_u() != self.sb.n_u() {
            return Err(Error::DimensionMismatch {
                what: "universe size",
                expected: self.sa.n_u(),
                got: self.sb.n_u(),
            });
        }
        if self.gt.shape() != (self.sa.n(), self.sb.n()) {
            return Err(Error::DimensionMismatch {
                what: "ground truth shape",
                expected: self.sa.n() * self.sb.n(),
                got: self.gt.rows() * self.gt.cols(),
            });
        }
        Ok(())
    }
}

/// Loss value and `∂L/∂raw` for both affinities of every batch item.
#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub loss: T,
    pub grads: Vec<(Array2<T>, Array2<T>)>,
}

fn row<T: Scalar>(s: &UniverseAffinity<T>, i: usize) -> Result<ArrayView1<'_, T>> {
    if i >= s.n() {
        return Err(Error::IndexOutOfRange {
            what: "affinity rows",
            index: i,
            len: s.n(),
        });
    }
    Ok(s.prob().row(i))
}

fn check_anchor<T: Scalar>(s: &UniverseAffinity<T>, t: usize) -> Result<()> {
    if t >= s.n_u() {
        return Err(Error::IndexOutOfRange {
            what: "anchors",
            index: t,
            len: s.n_u(),
        });
    }
    Ok(())
}

fn check_universe<T: Scalar>(sa: &UniverseAffinity<T>, sb: &UniverseAffinity<T>) -> Result<()> {
    if sa.n_u() != sb.n_u() {
        return Err(Error::DimensionMismatch {
            what: "universe size",
            expected: sa.n_u(),
            got: sb.n_u(),
        });
    }
    Ok(())
}

/// `Σ_k p^a_ik p^b_jk` over all anchors.
pub fn match_prob<T: Scalar>(sa: &UniverseAffinity<T>, sb: &UniverseAffinity<T>, i: usize, j: usize) -> Result<T> {
    check_universe(sa, sb)?;
    Ok(row(sa, i)?.dot(&row(sb, j)?))
}

/// Same inner product with the absorbing anchor left out.
pub fn partial_match_prob<T: Scalar>(
    sa: &UniverseAffinity<T>,
    sb: &UniverseAffinity<T>,
    i: usize,
    j: usize,
) -> Result<T> {
    check_universe(sa, sb)?;
    let n = sa.absorbing();
    let (a, b) = (row(sa, i)?, row(sb, j)?);
    Ok(a.slice(ndarray::s![..n]).dot(&b.slice(ndarray::s![..n])))
}

fn softmax_backward<T: Scalar>(prob: &Array2<T>, d_prob: &Array2<T>, temperature: T) -> Array2<T> {
    let inner = (prob * d_prob).sum_axis(Axis(1)).insert_axis(Axis(1));
    (d_prob - &inner) * prob / temperature
}

/// Loss of one pair with the gradients for its two raw affinities.
type ItemLoss<T> = (T, Array2<T>, Array2<T>);

fn item_loss<T: Scalar>(
    index: usize,
    item: &PairBatchItem<'_, T>,
    outlier_aware: bool,
    eps: T,
) -> Result<ItemLoss<T>> {
    item.validate()?;
    let mut pa = item.sa.prob().clone();
    let mut pb = item.sb.prob().clone();
    if outlier_aware {
        let n = item.sa.absorbing();
        pa.column_mut(n).fill(T::zero());
        pb.column_mut(n).fill(T::zero());
    }
    let p = pa.dot(&pb.t());
    let hi = T::one() - eps;
    let mut loss = T::zero();
    let mut d_p = Array2::zeros(p.dim());
    for ((i, j), &pij) in p.indexed_iter() {
        let matched = item.gt.contains(i, j);
        let clamped = pij.max(eps).min(hi);
        let term = if matched {
            -clamped.ln()
        } else {
            -(T::one() - clamped).ln()
        };
        if !term.is_finite() {
            return Err(Error::NonFiniteLoss {
                item: index,
                row: i,
                col: j,
            });
        }
        loss += item.weight * term;
        if pij > eps && pij < hi {
            d_p[[i, j]] = item.weight
                * if matched {
                    -T::one() / pij
                } else {
                    T::one() / (T::one() - pij)
                };
        }
    }
    // Columns zeroed above keep the absorbing anchor out of ∂L/∂p.
    let d_pa = d_p.dot(&pb);
    let d_pb = d_p.t().dot(&pa);
    let ga = softmax_backward(item.sa.prob(), &d_pa, item.sa.temperature());
    let gb = softmax_backward(item.sb.prob(), &d_pb, item.sb.temperature());
    Ok((loss, ga, gb))
}

/// Summed BCE over every entry of every pair in the batch, with raw-score gradients.
///
/// Items are evaluated in parallel; the reduction runs in item order so the
/// result does not depend on thread scheduling.
pub fn bce_loss<T: Scalar>(items: &[PairBatchItem<'_, T>], outlier_aware: bool, eps: T) -> Result<LossOutput<T>> {
    if !(eps > T::zero() && eps < T::lit(0.5)) {
        return Err(Error::InvalidConfig {
            field: "eps",
            reason: format!("clamp must lie in (0, 0.5), got {eps}"),
        });
    }
    let per_item: Vec<Result<ItemLoss<T>>> = items
        .par_iter()
        .enumerate()
        .map(|(k, item)| item_loss(k, item, outlier_aware, eps))
        .collect();
    let mut loss = T::zero();
    let mut grads = Vec::with_capacity(items.len());
    for result in per_item {
        let (l, ga, gb) = result?;
        loss += l;
        grads.push((ga, gb));
    }
    Ok(LossOutput { loss, grads })
}

/// Closed-form `∂L_ij/∂S^a_it` of the single-term vanilla BCE.
///
/// For `x_ij = 1` this is `p^a_it / p_ij · Σ_k p^a_ik (p^b_jk − p^b_jt)`; for
/// `x_ij = 0` the bracket flips sign and the normalizer is `1 − p_ij`, which
/// is what differentiating `−log(1 − p_ij)` gives.
pub fn vanilla_grad_entry<T: Scalar>(
    sa: &UniverseAffinity<T>,
    sb: &UniverseAffinity<T>,
    i: usize,
    j: usize,
    t: usize,
    x_ij: bool,
) -> Result<T> {
    check_anchor(sa, t)?;
    let p = match_prob(sa, sb, i, j)?;
    let (a, b) = (row(sa, i)?, row(sb, j)?);
    let bracket: T = a.iter().zip(b.iter()).map(|(&ak, &bk)| ak * (bk - b[t])).sum();
    let tiny = T::min_positive_value();
    let g = if x_ij {
        a[t] / p.max(tiny) * bracket
    } else {
        -a[t] / (T::one() - p).max(tiny) * bracket
    };
    Ok(g / sa.temperature())
}

/// Closed-form `∂L'_ij/∂S^a_it` of the single-term outlier-aware BCE, any anchor `t`.
///
/// With `p'` the partial probability, `∂p'/∂S^a_it = p^a_it (q_jt − p')` where
/// `q_j` is `p^b_j` with the absorbing entry zeroed. Zero where the clamp is active.
pub fn outlier_grad_entry<T: Scalar>(
    sa: &UniverseAffinity<T>,
    sb: &UniverseAffinity<T>,
    i: usize,
    j: usize,
    t: usize,
    x_ij: bool,
    eps: T,
) -> Result<T> {
    check_anchor(sa, t)?;
    let partial = partial_match_prob(sa, sb, i, j)?;
    let (a, b) = (row(sa, i)?, row(sb, j)?);
    if partial <= eps || partial >= T::one() - eps {
        return Ok(T::zero());
    }
    let q_t = if t == sa.absorbing() { T::zero() } else { b[t] };
    let d_partial = a[t] * (q_t - partial);
    let g = if x_ij {
        -d_partial / partial
    } else {
        d_partial / (T::one() - partial)
    };
    Ok(g / sa.temperature())
}

/// Gradient on the absorbing column: `p^a_in` when `x_ij = 1`, `−p^a_in p' / (1 − p')` otherwise.
///
/// The negative case is never positive: the outlier-aware loss only ever
/// pushes a non-matching pair towards the absorbing node.
pub fn outlier_grad_absorbing<T: Scalar>(
    sa: &UniverseAffinity<T>,
    sb: &UniverseAffinity<T>,
    i: usize,
    j: usize,
    x_ij: bool,
    eps: T,
) -> Result<T> {
    outlier_grad_entry(sa, sb, i, j, sa.absorbing(), x_ij, eps)
}
