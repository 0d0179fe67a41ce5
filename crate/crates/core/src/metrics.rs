//! Matching and clustering quality measures.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Matching, NodeType};
use crate::scalar::Scalar;

fn check_shapes(pred: &Matching, gt: &Matching) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::DimensionMismatch {
            what: "prediction vs ground truth size",
            expected: gt.rows() * gt.cols(),
            got: pred.rows() * pred.cols(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score<T> {
    pub f1: T,
    pub precision: T,
    pub recall: T,
}

/// Entry counts of a prediction against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

pub fn confusion(pred: &Matching, gt: &Matching) -> Result<Confusion> {
    check_shapes(pred, gt)?;
    let tp = pred.pairs().filter(|&(i, j)| gt.contains(i, j)).count();
    Ok(Confusion {
        tp,
        fp: pred.len() - tp,
        fn_: gt.len() - tp,
    })
}

/// F1 over matrix entries, `TP / (TP + (FP + FN) / 2)`.
///
/// An empty prediction of an empty ground truth scores 1 everywhere; an
/// undefined precision or recall otherwise counts as 0.
pub fn f1<T: Scalar>(pred: &Matching, gt: &Matching) -> Result<F1Score<T>> {
    let c = confusion(pred, gt)?;
    if pred.is_empty() && gt.is_empty() {
        return Ok(F1Score {
            f1: T::one(),
            precision: T::one(),
            recall: T::one(),
        });
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            T::zero()
        } else {
            T::lit(num as f64) / T::lit(den as f64)
        }
    };
    Ok(F1Score {
        f1: T::lit(c.tp as f64) / (T::lit(c.tp as f64) + T::lit((c.fp + c.fn_) as f64) / T::lit(2.0)),
        precision: ratio(c.tp, pred.len()),
        recall: ratio(c.tp, gt.len()),
    })
}

/// Denominator used by [`accuracy_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccuracyNorm {
    /// `||X_pred||_F^2`, the number of predicted matches.
    #[default]
    Prediction,
    /// `||X_gt||_F^2`, the number of ground-truth matches.
    GroundTruth,
}

/// `1 − ||X_pred − X_gt||_F^2 / ||X_pred||_F^2`; can be negative.
pub fn accuracy<T: Scalar>(pred: &Matching, gt: &Matching) -> Result<T> {
    accuracy_with(pred, gt, AccuracyNorm::Prediction)
}

/// Accuracy with a selectable normalizer. A zero normalizer yields 1 when
/// prediction and ground truth agree and 0 otherwise.
pub fn accuracy_with<T: Scalar>(pred: &Matching, gt: &Matching, norm: AccuracyNorm) -> Result<T> {
    let c = confusion(pred, gt)?;
    let den = match norm {
        AccuracyNorm::Prediction => pred.len(),
        AccuracyNorm::GroundTruth => gt.len(),
    };
    let diff = c.fp + c.fn_;
    if den == 0 {
        return Ok(if diff == 0 { T::one() } else { T::zero() });
    }
    Ok(T::one() - T::lit(diff as f64) / T::lit(den as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchTypeCounts {
    pub correct: usize,
    pub mismatching: usize,
    pub ill_matching: usize,
    pub over_matching: usize,
}

impl MatchTypeCounts {
    pub fn total(&self) -> usize {
        self.correct + self.mismatching + self.ill_matching + self.over_matching
    }
}

impl std::ops::AddAssign for MatchTypeCounts {
    fn add_assign(&mut self, o: Self) {
        self.correct += o.correct;
        self.mismatching += o.mismatching;
        self.ill_matching += o.ill_matching;
        self.over_matching += o.over_matching;
    }
}

/// Classifies every predicted pair by the node types of its endpoints.
pub fn match_types(
    pred: &Matching,
    types_a: &[NodeType],
    types_b: &[NodeType],
    gt: &Matching,
) -> Result<MatchTypeCounts> {
    check_shapes(pred, gt)?;
    if types_a.len() != pred.rows() {
        return Err(Error::DimensionMismatch {
            what: "node types of first graph",
            expected: pred.rows(),
            got: types_a.len(),
        });
    }
    if types_b.len() != pred.cols() {
        return Err(Error::DimensionMismatch {
            what: "node types of second graph",
            expected: pred.cols(),
            got: types_b.len(),
        });
    }
    use NodeType::*;
    let mut counts = MatchTypeCounts::default();
    for (i, j) in pred.pairs() {
        if gt.contains(i, j) {
            counts.correct += 1;
            continue;
        }
        match (types_a[i], types_b[j]) {
            (Outlier, _) | (_, Outlier) => counts.over_matching += 1,
            (MatchedInlier, MatchedInlier) => counts.mismatching += 1,
            _ => counts.ill_matching += 1,
        }
    }
    Ok(counts)
}

/// How within-cluster pair scores are folded into F1C / MAC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterAveraging {
    /// Mean over unordered distinct pairs in each cluster, then over clusters.
    #[default]
    WithinClusterMean,
    /// `1 − (1/k) Σ_j |C_j|^-2 Σ_pairs score`, read literally.
    Typeset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringMetrics<T> {
    pub cp: T,
    pub ri: T,
    pub ca: T,
    pub f1c: T,
    pub mac: T,
}

fn cluster_members(labels: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); k];
    for (g, &l) in labels.iter().enumerate() {
        members[l].push(g);
    }
    members
}

/// Clustering purity: `(1/m) Σ_i max_j |C_i ∩ C_j^gt|`.
pub fn clustering_purity<T: Scalar>(labels: &[usize], gt_labels: &[usize]) -> Result<T> {
    let table = contingency(labels, gt_labels)?;
    let hits: usize = table.outer_iter().map(|row| row.iter().copied().max().unwrap_or(0)).sum();
    Ok(T::lit(hits as f64) / T::lit(labels.len().max(1) as f64))
}

/// Rand index over unordered graph pairs.
pub fn rand_index<T: Scalar>(labels: &[usize], gt_labels: &[usize]) -> Result<T> {
    check_label_lengths(labels, gt_labels)?;
    let m = labels.len();
    if m < 2 {
        return Ok(T::one());
    }
    let mut agree = 0usize;
    for a in 0..m {
        for b in a + 1..m {
            if (labels[a] == labels[b]) == (gt_labels[a] == gt_labels[b]) {
                agree += 1;
            }
        }
    }
    Ok(T::lit(agree as f64) / T::lit((m * (m - 1) / 2) as f64))
}

/// Clustering accuracy: one minus the normalized count of graph pairs that
/// share a cluster but not a class, or a class but not a cluster.
pub fn clustering_accuracy<T: Scalar>(labels: &[usize], gt_labels: &[usize], k: usize) -> Result<T> {
    let table = contingency(labels, gt_labels)?;
    let sizes: Vec<usize> = table.outer_iter().map(|r| r.sum()).collect();
    let (kp, kg) = table.dim();
    let mut wrong = T::zero();
    for i in 0..kp {
        if sizes[i] == 0 {
            continue;
        }
        let norm = T::lit((sizes[i] * sizes[i]) as f64);
        for j1 in 0..kg {
            for j2 in 0..kg {
                if j1 != j2 {
                    wrong += T::lit((table[[i, j1]] * table[[i, j2]]) as f64) / norm;
                }
            }
        }
    }
    for i1 in 0..kp {
        for i2 in 0..kp {
            if i1 == i2 || sizes[i1] == 0 || sizes[i2] == 0 {
                continue;
            }
            let norm = T::lit((sizes[i1] * sizes[i2]) as f64);
            for j in 0..kg {
                wrong += T::lit((table[[i1, j]] * table[[i2, j]]) as f64) / norm;
            }
        }
    }
    Ok(T::one() - wrong / T::lit(k.max(1) as f64))
}

/// Within-cluster aggregate of a symmetric per-pair score matrix.
pub fn cluster_pair_average<T: Scalar>(
    labels: &[usize],
    k: usize,
    per_pair: &Array2<T>,
    averaging: ClusterAveraging,
) -> Result<T> {
    let m = labels.len();
    if per_pair.dim() != (m, m) {
        return Err(Error::DimensionMismatch {
            what: "per-pair score matrix",
            expected: m,
            got: per_pair.nrows(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::IndexOutOfRange {
            what: "cluster labels",
            index: bad,
            len: k,
        });
    }
    let members = cluster_members(labels, k);
    let mut acc = T::zero();
    let mut counted = 0usize;
    for cluster in &members {
        let mut sum = T::zero();
        let mut pairs = 0usize;
        for (x, &a) in cluster.iter().enumerate() {
            for &b in &cluster[x + 1..] {
                sum += per_pair[[a, b]];
                pairs += 1;
            }
        }
        match averaging {
            ClusterAveraging::WithinClusterMean => {
                if pairs > 0 {
                    acc += sum / T::lit(pairs as f64);
                    counted += 1;
                }
            }
            ClusterAveraging::Typeset => {
                if !cluster.is_empty() {
                    acc += sum / T::lit((cluster.len() * cluster.len()) as f64);
                }
            }
        }
    }
    Ok(match averaging {
        ClusterAveraging::WithinClusterMean if counted == 0 => T::one(),
        ClusterAveraging::WithinClusterMean => acc / T::lit(counted as f64),
        ClusterAveraging::Typeset => T::one() - acc / T::lit(k.max(1) as f64),
    })
}

pub fn clustering_metrics<T: Scalar>(
    labels: &[usize],
    k: usize,
    gt_labels: &[usize],
    per_pair_f1: &Array2<T>,
    per_pair_acc: &Array2<T>,
    averaging: ClusterAveraging,
) -> Result<ClusteringMetrics<T>> {
    Ok(ClusteringMetrics {
        cp: clustering_purity(labels, gt_labels)?,
        ri: rand_index(labels, gt_labels)?,
        ca: clustering_accuracy(labels, gt_labels, k)?,
        f1c: cluster_pair_average(labels, k, per_pair_f1, averaging)?,
        mac: cluster_pair_average(labels, k, per_pair_acc, averaging)?,
    })
}

fn check_label_lengths(labels: &[usize], gt_labels: &[usize]) -> Result<()> {
    if labels.len() != gt_labels.len() {
        return Err(Error::DimensionMismatch {
            what: "cluster labels",
            expected: gt_labels.len(),
            got: labels.len(),
        });
    }
    Ok(())
}

/// `table[i, j] = |C_i ∩ C_j^gt|`.
fn contingency(labels: &[usize], gt_labels: &[usize]) -> Result<Array2<usize>> {
    check_label_lengths(labels, gt_labels)?;
    let kp = labels.iter().max().map_or(0, |m| m + 1);
    let kg = gt_labels.iter().max().map_or(0, |m| m + 1);
    let mut table = Array2::zeros((kp, kg));
    for (&p, &g) in labels.iter().zip(gt_labels) {
        table[[p, g]] += 1;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use NodeType::*;

    fn m(rows: usize, cols: usize, pairs: &[(usize, usize)]) -> Matching {
        Matching::from_pairs(rows, cols, pairs.iter().copied()).unwrap()
    }

    #[test]
    fn f1_examples() {
        let gt = m(3, 3, &[(0, 0), (1, 1)]);
        let s: F1Score<f64> = f1(&gt, &gt).unwrap();
        assert_eq!((s.f1, s.precision, s.recall), (1.0, 1.0, 1.0));
        let disjoint = m(3, 3, &[(2, 2)]);
        let s: F1Score<f64> = f1(&disjoint, &gt).unwrap();
        assert_eq!((s.f1, s.precision, s.recall), (0.0, 0.0, 0.0));
        // TP = 1, FP = 1, FN = 1
        let pred = m(3, 3, &[(0, 0), (1, 2)]);
        let s: F1Score<f64> = f1(&pred, &gt).unwrap();
        assert_eq!(s.f1, 0.5);
        let empty = Matching::empty(3, 3);
        assert_eq!(f1::<f64>(&empty, &empty).unwrap().f1, 1.0);
        assert_eq!(f1::<f64>(&empty, &gt).unwrap().f1, 0.0);
        assert!(f1::<f64>(&Matching::empty(2, 3), &gt).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let gt = m(3, 3, &[(0, 0), (1, 1)]);
        assert_eq!(accuracy::<f64>(&gt, &gt).unwrap(), 1.0);
        // one correct, one wrong prediction, one missed ground-truth match
        let pred = m(3, 3, &[(0, 0), (2, 2)]);
        assert_eq!(accuracy::<f64>(&pred, &gt).unwrap(), 0.0);
        // three Frobenius terms over two predictions
        let gt3 = m(4, 4, &[(0, 0), (1, 1), (2, 2)]);
        let pred3 = m(4, 4, &[(0, 0), (3, 3)]);
        assert_eq!(accuracy::<f64>(&pred3, &gt3).unwrap(), -0.5);
        let one = m(2, 2, &[(0, 1)]);
        assert_eq!(accuracy::<f64>(&one, &Matching::empty(2, 2)).unwrap(), 0.0);
        assert_eq!(accuracy::<f64>(&Matching::empty(2, 2), &Matching::empty(2, 2)).unwrap(), 1.0);
        assert_eq!(accuracy::<f64>(&Matching::empty(2, 2), &one).unwrap(), 0.0);
        assert_eq!(
            accuracy_with::<f64>(&pred3, &gt3, AccuracyNorm::GroundTruth).unwrap(),
            0.0
        );
    }

    #[test]
    fn match_type_table() {
        let types_a = [MatchedInlier, UnmatchedInlier, Outlier];
        let types_b = [MatchedInlier, UnmatchedInlier, Outlier];
        let gt = m(3, 3, &[]);
        let count = |pairs: &[(usize, usize)]| match_types(&m(3, 3, pairs), &types_a, &types_b, &gt).unwrap();
        assert_eq!(count(&[(0, 1)]).ill_matching, 1);
        assert_eq!(count(&[(1, 2)]).over_matching, 1);
        assert_eq!(count(&[(0, 0)]).mismatching, 1);
        assert_eq!(count(&[(1, 1)]).ill_matching, 1);
        assert_eq!(count(&[(2, 0)]).over_matching, 1);
        let gt_hit = m(3, 3, &[(2, 2)]);
        let c = match_types(&m(3, 3, &[(2, 2)]), &types_a, &types_b, &gt_hit).unwrap();
        assert_eq!(c.correct, 1);
        assert!(match_types(&gt, &types_a[..2], &types_b, &gt).is_err());
    }

    #[test]
    fn clustering_examples() {
        let gt = [0, 0, 0, 0, 1, 1, 1, 1];
        let cp: f64 = clustering_purity(&gt, &gt).unwrap();
        let ri: f64 = rand_index(&gt, &gt).unwrap();
        assert_eq!((cp, ri), (1.0, 1.0));
        assert_eq!(clustering_accuracy::<f64>(&gt, &gt, 2).unwrap(), 1.0);

        let one = [0; 8];
        assert_eq!(clustering_purity::<f64>(&one, &gt).unwrap(), 0.5);
        assert!((rand_index::<f64>(&one, &gt).unwrap() - 12.0 / 28.0).abs() < 1e-15);
        // 2 · 4 · 4 / 64 misplaced mass in the single cluster
        assert_eq!(clustering_accuracy::<f64>(&one, &gt, 1).unwrap(), 0.5);

        let singletons: Vec<usize> = (0..8).collect();
        assert_eq!(clustering_purity::<f64>(&singletons, &gt).unwrap(), 1.0);
        assert!((rand_index::<f64>(&singletons, &gt).unwrap() - 16.0 / 28.0).abs() < 1e-15);
    }

    #[test]
    fn cluster_pair_averages() {
        let scores = Array2::from_shape_fn((4, 4), |(a, b)| if a == b { 1.0 } else { (a + b) as f64 / 10.0 });
        let labels = [0, 0, 1, 1];
        let within = cluster_pair_average(&labels, 2, &scores, ClusterAveraging::WithinClusterMean).unwrap();
        assert!((within - (0.1 + 0.5) / 2.0).abs() < 1e-15);
        let typeset = cluster_pair_average(&labels, 2, &scores, ClusterAveraging::Typeset).unwrap();
        assert!((typeset - (1.0 - (0.1 / 4.0 + 0.5 / 4.0) / 2.0)).abs() < 1e-15);
        let all = cluster_pair_average(&[0; 4], 1, &scores, ClusterAveraging::WithinClusterMean).unwrap();
        assert!((all - (0.1 + 0.2 + 0.3 + 0.3 + 0.4 + 0.5) / 6.0).abs() < 1e-15);
        assert!(cluster_pair_average(&[0, 2, 1, 1], 2, &scores, ClusterAveraging::Typeset).is_err());
    }
}
