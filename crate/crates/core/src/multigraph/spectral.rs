//! Normalized spectral clustering on a graph-to-graph similarity matrix.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const KMEANS_RESTARTS: usize = 50;
const KMEANS_MAX_ITERS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult<T> {
    pub labels: Vec<usize>,
    pub k: usize,
    pub pairwise_scores: Array2<T>,
}

fn validate<T: Scalar>(scores: &Array2<T>, k: usize) -> Result<()> {
    let (m, cols) = scores.dim();
    if m != cols {
        return Err(Error::DimensionMismatch {
            what: "score matrix columns",
            expected: m,
            got: cols,
        });
    }
    if k == 0 || k > m {
        return Err(Error::InvalidConfig {
            field: "k",
            reason: format!("need 1 <= k <= {m}, got {k}"),
        });
    }
    let scale = scores.iter().fold(T::one(), |acc, v| acc.max(v.abs()));
    let tol = T::lit(1e-9) * scale;
    for ((a, b), &v) in scores.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "score matrix",
                row: a,
                col: b,
            });
        }
        if v < T::zero() {
            return Err(Error::NegativeEntry {
                what: "score matrix",
                row: a,
                col: b,
            });
        }
        if (v - scores[[b, a]]).abs() > tol {
            return Err(Error::InvalidConfig {
                field: "scores",
                reason: format!("not symmetric at ({a}, {b})"),
            });
        }
    }
    Ok(())
}

/// Relabels clusters in order of first appearance.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Top-`k` eigenvectors of `D^-1/2 A D^-1/2` (zero diagonal), rows scaled to unit length.
fn embedding<T: Scalar>(scores: &Array2<T>, k: usize) -> Result<Vec<Vec<f64>>> {
    let m = scores.nrows();
    let a = DMatrix::from_fn(m, m, |i, j| if i == j { 0.0 } else { scores[[i, j]].to_f64_lossless() });
    let inv_sqrt: Vec<f64> = (0..m)
        .map(|i| {
            let d: f64 = a.row(i).sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let l = DMatrix::from_fn(m, m, |i, j| a[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
    let eig = SymmetricEigen::try_new(l, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| {
        eig.eigenvalues[y]
            .partial_cmp(&eig.eigenvalues[x])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.cmp(&y))
    });
    Ok((0..m)
        .map(|i| {
            let row: Vec<f64> = order[..k].iter().map(|&c| eig.eigenvectors[(i, c)]).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter().map(|v| v / norm).collect()
            } else {
                row
            }
        })
        .collect())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_once<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> (Vec<usize>, f64) {
    let m = points.len();
    let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..m)].clone()];
    while centers.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = m - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..m)
        };
        centers.push(points[pick].clone());
    }

    let mut labels = vec![usize::MAX; m];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(p, &centers[a]).total_cmp(&sq_dist(p, &centers[b])))
                .expect("k >= 1");
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed an empty cluster with the point farthest from its center.
                let far = (0..m)
                    .max_by(|&a, &b| {
                        sq_dist(&points[a], &centers[labels[a]]).total_cmp(&sq_dist(&points[b], &centers[labels[b]]))
                    })
                    .expect("m >= 1");
                centers[c] = points[far].clone();
                labels[far] = c;
                changed = true;
            } else {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| sq_dist(p, &centers[l]))
        .sum();
    (labels, inertia)
}

/// k-means with k-means++ seeding; the lowest-inertia run of `restarts` wins.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let (labels, inertia) = kmeans_once(points, k, &mut rng);
        if best.as_ref().is_none_or(|(_, b)| inertia < *b) {
            best = Some((labels, inertia));
        }
    }
    canonical_labels(&best.expect("at least one restart").0)
}

/// Spectral clustering of `m` graphs from a symmetric, non-negative score matrix.
pub fn spectral_cluster<T: Scalar>(scores: &Array2<T>, k: usize, seed: u64) -> Result<ClusterResult<T>> {
    validate(scores, k)?;
    let m = scores.nrows();
    let labels = if k == m {
        (0..m).collect()
    } else {
        let points = embedding(scores, k)?;
        kmeans(&points, k, KMEANS_RESTARTS, seed)
    };
    Ok(ClusterResult {
        labels,
        k,
        pairwise_scores: scores.clone(),
    })
}
