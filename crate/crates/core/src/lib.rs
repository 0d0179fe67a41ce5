//! Partial multi-graph matching through a learned universe of anchors.
//!
//! Each graph's nodes are scored against `n_u` universe anchors (the last one
//! absorbs outliers), assigned to anchors by the Hungarian method, and
//! pairwise matchings are read off shared anchors, which makes them cycle
//! consistent by construction.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for common use.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod affinity;
pub mod datagen;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod multigraph;
pub mod scalar;
pub mod solver;
pub mod train;

pub use affinity::{UniverseAffinity, UniverseMetric};
pub use datagen::{GenConfig, InstanceSet};
pub use error::{Error, Result};
pub use graph::{GraphInstance, Matching, NodeType, UniverseMode, UniverseSpec};
pub use scalar::Scalar;
pub use solver::{UniverseAssignment, UniverseSlot};
pub use train::{Checkpoint, SamplingMode, TrainConfig, TrainHistory};

pub type Metric = UniverseMetric<f64>;
pub type Affinity = UniverseAffinity<f64>;
pub type Graph = GraphInstance<f64>;
pub type Assignment = UniverseAssignment<f64>;
pub type Instances = InstanceSet<f64>;

pub type MetricF32 = UniverseMetric<f32>;
pub type AffinityF32 = UniverseAffinity<f32>;
pub type GraphF32 = GraphInstance<f32>;
pub type AssignmentF32 = UniverseAssignment<f32>;
pub type InstancesF32 = InstanceSet<f32>;
