//! Matching many graphs through one universe: online sessions, batch
//! matching, and mixture matching with clustering.

mod session;
mod spectral;

use ndarray::Array2;

pub use session::{
    match_batch, session_add, session_pairwise, AdmissionCost, BatchMatching, MatchSession,
};
pub use spectral::{canonical_labels, kmeans, spectral_cluster, ClusterResult, KMEANS_RESTARTS};

use crate::affinity::{UniverseAffinity, UniverseMetric};
use crate::error::{Error, Result};
use crate::graph::{GraphInstance, Matching};
use crate::scalar::Scalar;
use crate::solver::{infer_universe, reconstruct_pairwise, UniverseAssignment};

/// Sum over matched pairs of the reconstructed pairwise affinity `p^a (p^b)^T`.
pub fn affinity_score<T: Scalar>(xab: &Matching, sa: &UniverseAffinity<T>, sb: &UniverseAffinity<T>) -> Result<T> {
    if xab.shape() != (sa.n(), sb.n()) {
        return Err(Error::DimensionMismatch {
            what: "matching shape",
            expected: sa.n() * sb.n(),
            got: xab.rows() * xab.cols(),
        });
    }
    if sa.n_u() != sb.n_u() {
        return Err(Error::DimensionMismatch {
            what: "universe size",
            expected: sa.n_u(),
            got: sb.n_u(),
        });
    }
    Ok(xab
        .pairs()
        .map(|(i, j)| sa.prob().row(i).dot(&sb.prob().row(j)))
        .sum())
}

/// Output of [`mixture_pipeline`].
#[derive(Debug, Clone)]
pub struct MixtureResult<T> {
    pub clusters: ClusterResult<T>,
    pub assignments: Vec<UniverseAssignment<T>>,
    /// `pairwise[a][b]` for every ordered pair, including `a == b`.
    pub pairwise: Vec<Vec<Matching>>,
}

impl<T: Scalar> MixtureResult<T> {
    /// Matchings between distinct graphs placed in the same cluster (`a < b`).
    pub fn within_cluster(&self) -> Vec<(usize, usize, &Matching)> {
        let labels = &self.clusters.labels;
        let m = labels.len();
        let mut out = Vec::new();
        for a in 0..m {
            for b in a + 1..m {
                if labels[a] == labels[b] {
                    out.push((a, b, &self.pairwise[a][b]));
                }
            }
        }
        out
    }
}

/// Universe inference for every graph, pairwise affinity scores, and spectral
/// clustering into `k` groups.
pub fn mixture_pipeline<T: Scalar>(
    graphs: &[GraphInstance<T>],
    metric: &UniverseMetric<T>,
    k: usize,
    seed: u64,
) -> Result<MixtureResult<T>> {
    if graphs.len() < k {
        return Err(Error::Insufficient(format!(
            "{} graphs cannot form {k} clusters",
            graphs.len()
        )));
    }
    let affinities = graphs
        .iter()
        .map(|g| metric.forward_eval(g.features().view()))
        .collect::<Result<Vec<_>>>()?;
    let assignments = affinities
        .iter()
        .zip(graphs)
        .map(|(s, g)| infer_universe(s, g.id()))
        .collect::<Result<Vec<_>>>()?;
    let m = graphs.len();
    let mut pairwise = Vec::with_capacity(m);
    let mut scores = Array2::zeros((m, m));
    for a in 0..m {
        let mut row = Vec::with_capacity(m);
        for b in 0..m {
            let x = reconstruct_pairwise(&assignments[a], &assignments[b])?;
            scores[[a, b]] = affinity_score(&x, &affinities[a], &affinities[b])?;
            row.push(x);
        }
        pairwise.push(row);
    }
    let clusters = spectral_cluster(&scores, k, seed)?;
    Ok(MixtureResult {
        clusters,
        assignments,
        pairwise,
    })
}
