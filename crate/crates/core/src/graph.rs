//! Graphs, universe layouts, partial matchings and node typing.
//!
//! Edges are never materialized: every graph is a bag of node features, and
//! correspondences are expressed against a universe of anchors whose last
//! slot is the absorbing node collecting outliers.

use std::collections::HashSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-graph node features, one row per node.
pub type FeatureMatrix<T> = Array2<T>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UniverseMode {
    /// Anchor slot `i` is shared by the `i`-th anchor of every class.
    FeatureMerged,
    /// Every class owns a disjoint block of anchors.
    NodeMerged,
}

/// Size and layout of the universe graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniverseSpec {
    n_u: usize,
    mode: UniverseMode,
    class_count: usize,
    /// Anchors per class, used to place class-local anchors into universe slots.
    class_sizes: Vec<usize>,
}

impl UniverseSpec {
    /// Builds a spec with an explicit anchor count (absorbing node included).
    pub fn new(n_u: usize, mode: UniverseMode, class_sizes: Vec<usize>) -> Result<Self> {
        if n_u < 2 {
            return Err(Error::InvalidConfig {
                field: "n_u",
                reason: format!("need at least one anchor plus the absorbing node, got {n_u}"),
            });
        }
        Ok(Self {
            n_u,
            mode,
            class_count: class_sizes.len(),
            class_sizes,
        })
    }

    /// The natural size for `mode`: `max n_i + 1` or `sum n_i + 1`.
    pub fn for_classes(mode: UniverseMode, class_sizes: &[usize]) -> Result<Self> {
        let semantic = match mode {
            UniverseMode::FeatureMerged => class_sizes.iter().copied().max().unwrap_or(0),
            UniverseMode::NodeMerged => class_sizes.iter().sum(),
        };
        Self::new(semantic + 1, mode, class_sizes.to_vec())
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn mode(&self) -> UniverseMode {
        self.mode
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn class_sizes(&self) -> &[usize] {
        &self.class_sizes
    }

    /// Index of the absorbing node (always the last anchor).
    pub fn absorbing(&self) -> usize {
        self.n_u - 1
    }

    /// Universe slot of the class-local anchor `anchor`, if the layout has room for it.
    pub fn slot(&self, class_id: usize, anchor: usize) -> Option<usize> {
        if let Some(&size) = self.class_sizes.get(class_id) {
            if anchor >= size {
                return None;
            }
        }
        let slot = match self.mode {
            UniverseMode::FeatureMerged => anchor,
            UniverseMode::NodeMerged => {
                let offset: usize = self.class_sizes.get(..class_id)?.iter().sum();
                offset + anchor
            }
        };
        (slot < self.absorbing()).then_some(slot)
    }
}

/// One graph: node features plus optional planted labels.
///
/// `gt_anchors[i]` is the class-local anchor of node `i`, or `None` for a
/// planted outlier. [`GraphInstance::universe_gt`] translates these labels
/// into universe slots for a given [`UniverseSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInstance<T> {
    id: String,
    class_id: usize,
    features: FeatureMatrix<T>,
    gt_anchors: Option<Vec<Option<usize>>>,
}

impl<T: Scalar> GraphInstance<T> {
    pub fn new(
        id: impl Into<String>,
        class_id: usize,
        features: FeatureMatrix<T>,
        gt_anchors: Option<Vec<Option<usize>>>,
    ) -> Result<Self> {
        let id = id.into();
        let invalid = |reason: String| Error::InvalidGraph {
            id: id.clone(),
            reason,
        };
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(invalid(format!("empty feature matrix {n}x{d}")));
        }
        if let Some(((row, col), _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "graph features",
                row,
                col,
            });
        }
        if let Some(labels) = &gt_anchors {
            if labels.len() != n {
                return Err(invalid(format!("{} labels for {n} nodes", labels.len())));
            }
            let mut seen = HashSet::new();
            for anchor in labels.iter().flatten() {
                if !seen.insert(*anchor) {
                    return Err(invalid(format!("anchor {anchor} used by two nodes")));
                }
            }
        }
        Ok(Self {
            id,
            class_id,
            features,
            gt_anchors,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn class_id(&self) -> usize {
        self.class_id
    }

    pub fn features(&self) -> &FeatureMatrix<T> {
        &self.features
    }

    pub fn n_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn gt_anchors(&self) -> Option<&[Option<usize>]> {
        self.gt_anchors.as_deref()
    }

    /// Planted outlier flags, one per node.
    pub fn outlier_mask(&self) -> Result<Vec<bool>> {
        let labels = self
            .gt_anchors()
            .ok_or_else(|| Error::MissingGroundTruth(self.id.clone()))?;
        Ok(labels.iter().map(Option::is_none).collect())
    }

    /// Ground truth expressed as universe slots; outliers map to the absorbing node.
    pub fn universe_gt(&self, spec: &UniverseSpec) -> Result<Vec<usize>> {
        let labels = self
            .gt_anchors()
            .ok_or_else(|| Error::MissingGroundTruth(self.id.clone()))?;
        labels
            .iter()
            .map(|label| match label {
                None => Ok(spec.absorbing()),
                Some(anchor) => spec.slot(self.class_id, *anchor).ok_or(Error::IndexOutOfRange {
                    what: "universe slot",
                    index: *anchor,
                    len: spec.absorbing(),
                }),
            })
            .collect()
    }
}

/// A binary partial permutation matrix (`X 1 <= 1`, `X^T 1 <= 1`).
///
/// Stored as a row-to-column map; the column-uniqueness invariant is checked
/// by every constructor.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Matching {
    rows: usize,
    cols: usize,
    row_to_col: Vec<Option<usize>>,
}

impl Matching {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_to_col: vec![None; rows],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_to_col: (0..n).map(Some).collect(),
        }
    }

    /// Builds a matching from a row assignment; rejects out-of-range or repeated columns.
    pub fn from_assignment(cols: usize, row_to_col: Vec<Option<usize>>) -> Result<Self> {
        let mut used = vec![false; cols];
        for (row, col) in row_to_col.iter().enumerate() {
            if let Some(c) = *col {
                if c >= cols {
                    return Err(Error::InvalidMatching(format!(
                        "row {row} assigned to column {c} of {cols}"
                    )));
                }
                if std::mem::replace(&mut used[c], true) {
                    return Err(Error::InvalidMatching(format!("column {c} used twice")));
                }
            }
        }
        Ok(Self {
            rows: row_to_col.len(),
            cols,
            row_to_col,
        })
    }

    pub fn from_pairs(
        rows: usize,
        cols: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut row_to_col = vec![None; rows];
        for (r, c) in pairs {
            let slot = row_to_col.get_mut(r).ok_or_else(|| {
                Error::InvalidMatching(format!("row {r} out of range for {rows} rows"))
            })?;
            if slot.replace(c).is_some() {
                return Err(Error::InvalidMatching(format!("row {r} used twice")));
            }
        }
        Self::from_assignment(cols, row_to_col)
    }

    /// Parses a dense 0/1 matrix.
    pub fn from_dense<T: Scalar>(dense: &Array2<T>) -> Result<Self> {
        let (rows, cols) = dense.dim();
        let mut pairs = Vec::new();
        for ((r, c), &v) in dense.indexed_iter() {
            if v == T::one() {
                pairs.push((r, c));
            } else if v != T::zero() {
                return Err(Error::InvalidMatching(format!(
                    "entry ({r}, {c}) = {v} is not binary"
                )));
            }
        }
        Self::from_pairs(rows, cols, pairs)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Number of matched pairs.
    pub fn len(&self) -> usize {
        self.row_to_col.iter().flatten().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn col_of(&self, row: usize) -> Option<usize> {
        self.row_to_col.get(row).copied().flatten()
    }

    pub fn row_of(&self, col: usize) -> Option<usize> {
        self.row_to_col.iter().position(|c| *c == Some(col))
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.col_of(row) == Some(col)
    }

    pub fn assignment(&self) -> &[Option<usize>] {
        &self.row_to_col
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.row_to_col
            .iter()
            .enumerate()
            .filter_map(|(r, c)| c.map(|c| (r, c)))
    }

    pub fn transpose(&self) -> Self {
        let mut row_to_col = vec![None; self.cols];
        for (r, c) in self.pairs() {
            row_to_col[c] = Some(r);
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            row_to_col,
        }
    }

    /// Matrix product `self * other`; a product of partial permutations is one too.
    pub fn compose(&self, other: &Matching) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                what: "matching composition",
                expected: self.cols,
                got: other.rows,
            });
        }
        let row_to_col = self
            .row_to_col
            .iter()
            .map(|c| c.and_then(|c| other.col_of(c)))
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: other.cols,
            row_to_col,
        })
    }

    pub fn to_dense<T: Scalar>(&self) -> Array2<T> {
        let mut dense = Array2::zeros((self.rows, self.cols));
        for (r, c) in self.pairs() {
            dense[[r, c]] = T::one();
        }
        dense
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeType {
    MatchedInlier,
    UnmatchedInlier,
    Outlier,
}

/// Pairwise graph correspondence: does `node` have a partner under `pair_gt`?
pub fn pgc(node: usize, pair_gt: &Matching) -> Result<bool> {
    if node >= pair_gt.rows() {
        return Err(Error::IndexOutOfRange {
            what: "pairwise ground truth rows",
            index: node,
            len: pair_gt.rows(),
        });
    }
    Ok(pair_gt.col_of(node).is_some())
}

/// Multiple graph correspondence: does `node` have a partner in any corpus graph?
///
/// Every corpus entry pairs `graph` (rows) with another graph (columns).
pub fn mgc<T: Scalar>(
    node: usize,
    graph: &GraphInstance<T>,
    corpus: &[(&GraphInstance<T>, &Matching)],
) -> Result<bool> {
    if node >= graph.n_nodes() {
        return Err(Error::IndexOutOfRange {
            what: "graph nodes",
            index: node,
            len: graph.n_nodes(),
        });
    }
    let mut found = false;
    for (other, gt) in corpus {
        if gt.rows() != graph.n_nodes() {
            return Err(Error::DimensionMismatch {
                what: "corpus matching rows",
                expected: graph.n_nodes(),
                got: gt.rows(),
            });
        }
        if gt.cols() != other.n_nodes() {
            return Err(Error::DimensionMismatch {
                what: "corpus matching columns",
                expected: other.n_nodes(),
                got: gt.cols(),
            });
        }
        found |= gt.col_of(node).is_some();
    }
    Ok(found)
}

pub fn node_type<T: Scalar>(
    node: usize,
    graph: &GraphInstance<T>,
    pair_gt: &Matching,
    corpus: &[(&GraphInstance<T>, &Matching)],
) -> Result<NodeType> {
    let pairwise = pgc(node, pair_gt)?;
    let multi = mgc(node, graph, corpus)?;
    Ok(match (pairwise, multi) {
        (true, _) => NodeType::MatchedInlier,
        (false, true) => NodeType::UnmatchedInlier,
        (false, false) => NodeType::Outlier,
    })
}

/// Node types of every node of `graph` against one partner.
pub fn node_types<T: Scalar>(
    graph: &GraphInstance<T>,
    pair_gt: &Matching,
    corpus: &[(&GraphInstance<T>, &Matching)],
) -> Result<Vec<NodeType>> {
    (0..graph.n_nodes())
        .map(|i| node_type(i, graph, pair_gt, corpus))
        .collect()
}
