//! Discrete inference against the universe graph.
//!
//! Each graph is solved on its own: rows whose most likely anchor is the
//! absorbing node are filtered out, the remaining rows are assigned to
//! distinct anchors with [`hungarian`], and pairwise matchings are rebuilt by
//! joining two universe assignments on their anchors.

mod hungarian;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

pub use hungarian::{exhaustive_assignment, hungarian, hungarian_calls};

use crate::affinity::UniverseAffinity;
use crate::error::{Error, Result};
use crate::graph::Matching;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UniverseSlot {
    Anchor(usize),
    Outlier,
}

impl UniverseSlot {
    pub fn anchor(self) -> Option<usize> {
        match self {
            UniverseSlot::Anchor(k) => Some(k),
            UniverseSlot::Outlier => None,
        }
    }
}

/// Node-to-anchor assignment of one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct UniverseAssignment<T> {
    graph_id: String,
    n_u: usize,
    assign: Vec<UniverseSlot>,
    score: T,
}

impl<T: Scalar> UniverseAssignment<T> {
    /// Validates that anchors are semantic (below the absorbing index) and distinct.
    pub fn new(graph_id: impl Into<String>, n_u: usize, assign: Vec<UniverseSlot>, score: T) -> Result<Self> {
        let mut used = vec![false; n_u.saturating_sub(1)];
        for slot in &assign {
            if let UniverseSlot::Anchor(k) = *slot {
                let flag = used.get_mut(k).ok_or(Error::IndexOutOfRange {
                    what: "semantic anchors",
                    index: k,
                    len: n_u.saturating_sub(1),
                })?;
                if std::mem::replace(flag, true) {
                    return Err(Error::InvalidMatching(format!("anchor {k} assigned twice")));
                }
            }
        }
        Ok(Self {
            graph_id: graph_id.into(),
            n_u,
            assign,
            score,
        })
    }

    pub fn graph_id(&self) -> &str {
        &self.graph_id
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn slots(&self) -> &[UniverseSlot] {
        &self.assign
    }

    pub fn score(&self) -> T {
        self.score
    }

    pub fn n_nodes(&self) -> usize {
        self.assign.len()
    }

    pub fn outlier_count(&self) -> usize {
        self.assign.iter().filter(|s| **s == UniverseSlot::Outlier).count()
    }

    /// Zero-filled universe matching without the absorbing column (`n x (n_u - 1)`).
    pub fn to_matching(&self) -> Matching {
        let cols = self.n_u - 1;
        Matching::from_assignment(cols, self.assign.iter().map(|s| s.anchor()).collect())
            .expect("constructor checked anchor uniqueness")
    }
}

/// Rows kept by [`outlier_filter`] and their affinities without the absorbing column.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredAffinity<T> {
    pub kept: Vec<usize>,
    pub reduced: Array2<T>,
}

/// Drops every row whose probability on the absorbing node strictly exceeds
/// every other anchor; ties keep the row.
pub fn outlier_filter<T: Scalar>(s: &UniverseAffinity<T>) -> FilteredAffinity<T> {
    let prob = s.prob();
    let absorbing = s.absorbing();
    let kept: Vec<usize> = prob
        .outer_iter()
        .enumerate()
        .filter(|(_, row)| {
            let a = row[absorbing];
            !row.slice(s![..absorbing]).iter().all(|&p| a > p)
        })
        .map(|(i, _)| i)
        .collect();
    let reduced = Array2::from_shape_fn((kept.len(), absorbing), |(r, k)| prob[[kept[r], k]]);
    FilteredAffinity { kept, reduced }
}

/// Outlier filter followed by one maximizing [`hungarian`] call on the kept rows.
///
/// Kept rows left without an anchor (more kept rows than semantic anchors)
/// are reported as outliers.
pub fn infer_universe<T: Scalar>(s: &UniverseAffinity<T>, graph_id: &str) -> Result<UniverseAssignment<T>> {
    if s.n_u() < 2 {
        return Err(Error::DimensionMismatch {
            what: "universe size",
            expected: 2,
            got: s.n_u(),
        });
    }
    let filtered = outlier_filter(s);
    let matching = hungarian(filtered.reduced.view(), true)?;
    let mut assign = vec![UniverseSlot::Outlier; s.n()];
    let mut score = T::zero();
    for (r, k) in matching.pairs() {
        assign[filtered.kept[r]] = UniverseSlot::Anchor(k);
        score += filtered.reduced[[r, k]];
    }
    UniverseAssignment::new(graph_id, s.n_u(), assign, score)
}

/// `X_ab = Fill(X_a) Fill(X_b)^T`: nodes match when they share a semantic anchor.
pub fn reconstruct_pairwise<T: Scalar>(xa: &UniverseAssignment<T>, xb: &UniverseAssignment<T>) -> Result<Matching> {
    if xa.n_u != xb.n_u {
        return Err(Error::DimensionMismatch {
            what: "universe size",
            expected: xa.n_u,
            got: xb.n_u,
        });
    }
    let mut owner = vec![None; xa.n_u];
    for (j, slot) in xb.assign.iter().enumerate() {
        if let UniverseSlot::Anchor(k) = *slot {
            owner[k] = Some(j);
        }
    }
    let row_to_col = xa
        .assign
        .iter()
        .map(|slot| slot.anchor().and_then(|k| owner[k]))
        .collect();
    Matching::from_assignment(xb.n_nodes(), row_to_col)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn affinity(p: Array2<f64>) -> UniverseAffinity<f64> {
        UniverseAffinity::from_prob(p).unwrap()
    }

    #[test]
    fn filter_examples() {
        let all_absorbing = affinity(array![[0.0, 0.0, 1.0], [0.1, 0.1, 0.8]]);
        let f = outlier_filter(&all_absorbing);
        assert!(f.kept.is_empty());
        assert_eq!(f.reduced.dim(), (0, 2));

        let none = affinity(array![[0.5, 0.2, 0.3], [0.2, 0.5, 0.3]]);
        assert_eq!(outlier_filter(&none).kept, vec![0, 1]);

        let tie = affinity(array![[0.4, 0.2, 0.4]]);
        assert_eq!(outlier_filter(&tie).kept, vec![0]);
    }

    #[test]
    fn infer_identity_pattern() {
        let s = affinity(array![[0.9, 0.05, 0.05], [0.05, 0.9, 0.05]]);
        let x = infer_universe(&s, "g").unwrap();
        assert_eq!(x.slots(), &[UniverseSlot::Anchor(0), UniverseSlot::Anchor(1)]);
        assert!((x.score() - 1.8).abs() < 1e-12);
    }

    #[test]
    fn infer_all_outliers() {
        let s = affinity(array![[0.1, 0.1, 0.8], [0.2, 0.2, 0.6]]);
        let x = infer_universe(&s, "g").unwrap();
        assert_eq!(x.outlier_count(), 2);
        assert_eq!(x.score(), 0.0);
    }

    #[test]
    fn surplus_rows_become_outliers() {
        let s = affinity(array![[0.6, 0.3, 0.1], [0.5, 0.4, 0.1], [0.7, 0.2, 0.1]]);
        let x = infer_universe(&s, "g").unwrap();
        assert_eq!(x.outlier_count(), 1);
        assert_eq!(x.slots().iter().filter(|s| s.anchor().is_some()).count(), 2);
    }

    #[test]
    fn reconstruct_examples() {
        use UniverseSlot::*;
        let a = UniverseAssignment::new("a", 4, vec![Anchor(0), Outlier, Anchor(2)], 0.0).unwrap();
        let same = reconstruct_pairwise(&a, &a).unwrap();
        assert_eq!(same.assignment(), &[Some(0), None, Some(2)]);
        let b = UniverseAssignment::new("b", 4, vec![Anchor(1), Outlier], 0.0).unwrap();
        assert!(reconstruct_pairwise(&a, &b).unwrap().is_empty());
        let c = UniverseAssignment::new("c", 5, vec![Anchor(1)], 0.0).unwrap();
        assert!(reconstruct_pairwise(&a, &c).is_err());
    }

    #[test]
    fn assignment_rejects_duplicate_or_absorbing_anchor() {
        use UniverseSlot::*;
        assert!(UniverseAssignment::new("a", 3, vec![Anchor(1), Anchor(1)], 0.0).is_err());
        assert!(UniverseAssignment::new("a", 3, vec![Anchor(2)], 0.0).is_err());
    }
}
