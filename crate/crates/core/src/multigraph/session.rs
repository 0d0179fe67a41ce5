use crate::affinity::{forward_calls, UniverseMetric};
use crate::error::{Error, Result};
use crate::graph::{GraphInstance, Matching, UniverseSpec};
use crate::scalar::Scalar;
use crate::solver::{hungarian_calls, infer_universe, reconstruct_pairwise, UniverseAssignment};

/// Work performed while admitting one graph, measured by the call counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AdmissionCost {
    pub forwards: u64,
    pub hungarian_calls: u64,
}

/// Online matching against a frozen metric.
///
/// Only the per-graph universe assignments are stored; pairwise matchings are
/// rebuilt on demand, so storage grows linearly with the number of graphs.
#[derive(Debug, Clone)]
pub struct MatchSession<'m, T> {
    metric: &'m UniverseMetric<T>,
    spec: UniverseSpec,
    stored: Vec<UniverseAssignment<T>>,
    costs: Vec<AdmissionCost>,
}

impl<'m, T: Scalar> MatchSession<'m, T> {
    pub fn new(metric: &'m UniverseMetric<T>, spec: UniverseSpec) -> Result<Self> {
        if spec.n_u() != metric.n_u() {
            return Err(Error::DimensionMismatch {
                what: "session universe size",
                expected: metric.n_u(),
                got: spec.n_u(),
            });
        }
        Ok(Self {
            metric,
            spec,
            stored: Vec::new(),
            costs: Vec::new(),
        })
    }

    pub fn spec(&self) -> &UniverseSpec {
        &self.spec
    }

    /// One forward pass and one universe inference for the new graph.
    pub fn add(&mut self, graph: &GraphInstance<T>) -> Result<&UniverseAssignment<T>> {
        let (f0, h0) = (forward_calls(), hungarian_calls());
        let affinity = self.metric.forward_eval(graph.features().view())?;
        let assignment = infer_universe(&affinity, graph.id())?;
        self.costs.push(AdmissionCost {
            forwards: forward_calls() - f0,
            hungarian_calls: hungarian_calls() - h0,
        });
        self.stored.push(assignment);
        Ok(self.stored.last().expect("just pushed"))
    }

    pub fn pairwise(&self, i: usize, j: usize) -> Result<Matching> {
        let a = self.stored.get(i).ok_or(Error::UnknownGraph(i))?;
        let b = self.stored.get(j).ok_or(Error::UnknownGraph(j))?;
        reconstruct_pairwise(a, b)
    }

    pub fn len(&self) -> usize {
        self.stored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stored.is_empty()
    }

    pub fn assignments(&self) -> &[UniverseAssignment<T>] {
        &self.stored
    }

    pub fn costs(&self) -> &[AdmissionCost] {
        &self.costs
    }
}

pub fn session_add<'s, T: Scalar>(
    session: &'s mut MatchSession<'_, T>,
    graph: &GraphInstance<T>,
) -> Result<&'s UniverseAssignment<T>> {
    session.add(graph)
}

pub fn session_pairwise<T: Scalar>(session: &MatchSession<'_, T>, i: usize, j: usize) -> Result<Matching> {
    session.pairwise(i, j)
}

/// All graphs matched at once: universe assignments plus every pairwise matching.
#[derive(Debug, Clone)]
pub struct BatchMatching<T> {
    pub assignments: Vec<UniverseAssignment<T>>,
    pairwise: Vec<Vec<Matching>>,
}

impl<T: Scalar> BatchMatching<T> {
    pub fn pairwise(&self, i: usize, j: usize) -> Result<&Matching> {
        self.pairwise
            .get(i)
            .ok_or(Error::UnknownGraph(i))?
            .get(j)
            .ok_or(Error::UnknownGraph(j))
    }
}

pub fn match_batch<T: Scalar>(metric: &UniverseMetric<T>, graphs: &[GraphInstance<T>]) -> Result<BatchMatching<T>> {
    let assignments = graphs
        .iter()
        .map(|g| infer_universe(&metric.forward_eval(g.features().view())?, g.id()))
        .collect::<Result<Vec<_>>>()?;
    let pairwise = assignments
        .iter()
        .map(|a| {
            assignments
                .iter()
                .map(|b| reconstruct_pairwise(a, b))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BatchMatching {
        assignments,
        pairwise,
    })
}
