//! Synthetic instances with planted universe correspondences.
//!
//! Every class owns a set of prototype vectors (anchors). A graph of class
//! `c` keeps a random subset of the class anchors, perturbs each prototype
//! with Gaussian noise, and appends outliers drawn uniformly from the
//! bounding box of all prototypes. Node order is shuffled per graph.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphInstance, Matching, UniverseMode, UniverseSpec};
use crate::io::{atomic_write, sha256_hex};
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const GRAPHS_FILE: &str = "graphs.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub class_count: usize,
    /// One entry per class, or a single entry shared by all classes.
    pub anchors_per_class: Vec<usize>,
    pub feature_dim: usize,
    pub graphs_per_class: usize,
    /// Inclusive range of inliers dropped per graph.
    pub inlier_drop_range: [usize; 2],
    /// Inclusive range of outliers added per graph.
    pub outlier_count_range: [usize; 2],
    pub feature_noise_sigma: f64,
    pub seed: u64,
}

impl GenConfig {
    pub fn class_sizes(&self) -> Vec<usize> {
        match self.anchors_per_class.as_slice() {
            [single] => vec![*single; self.class_count],
            many => many.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: String| Err(Error::InvalidConfig { field, reason });
        if self.class_count == 0 {
            return bad("class_count", "must be at least 1".into());
        }
        let sizes = self.class_sizes();
        if sizes.len() != self.class_count {
            return bad(
                "anchors_per_class",
                format!("{} entries for {} classes", sizes.len(), self.class_count),
            );
        }
        if sizes.contains(&0) {
            return bad("anchors_per_class", "every class needs at least one anchor".into());
        }
        if self.feature_dim == 0 {
            return bad("feature_dim", "must be at least 1".into());
        }
        let [drop_lo, drop_hi] = self.inlier_drop_range;
        if drop_lo > drop_hi {
            return bad("inlier_drop_range", format!("lower bound {drop_lo} exceeds upper {drop_hi}"));
        }
        let min_anchors = sizes.iter().copied().min().unwrap_or(0);
        if drop_hi >= min_anchors {
            return bad(
                "inlier_drop_range",
                format!("upper bound {drop_hi} must be below the smallest class size {min_anchors}"),
            );
        }
        let [out_lo, out_hi] = self.outlier_count_range;
        if out_lo > out_hi {
            return bad("outlier_count_range", format!("lower bound {out_lo} exceeds upper {out_hi}"));
        }
        if !(self.feature_noise_sigma >= 0.0 && self.feature_noise_sigma.is_finite()) {
            return bad("feature_noise_sigma", "must be finite and non-negative".into());
        }
        Ok(())
    }
}

/// A generated or loaded dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSet<T> {
    pub graphs: Vec<GraphInstance<T>>,
    pub class_sizes: Vec<usize>,
    pub feature_dim: usize,
    /// False when there were more prototypes than feature dimensions.
    pub orthogonal_prototypes: bool,
    pub config: Option<GenConfig>,
}

impl<T: Scalar> InstanceSet<T> {
    pub fn class_count(&self) -> usize {
        self.class_sizes.len()
    }

    pub fn class_labels(&self) -> Vec<usize> {
        self.graphs.iter().map(GraphInstance::class_id).collect()
    }

    /// Indices of the graphs of each class.
    pub fn by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.class_count()];
        for (i, g) in self.graphs.iter().enumerate() {
            out[g.class_id()].push(i);
        }
        out
    }

    pub fn universe_spec(&self, mode: UniverseMode) -> Result<UniverseSpec> {
        UniverseSpec::for_classes(mode, &self.class_sizes)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            graphs: indices.iter().map(|&i| self.graphs[i].clone()).collect(),
            class_sizes: self.class_sizes.clone(),
            feature_dim: self.feature_dim,
            orthogonal_prototypes: self.orthogonal_prototypes,
            config: self.config.clone(),
        }
    }
}

fn prototypes<R: Rng>(count: usize, d: usize, rng: &mut R) -> (Vec<Array1<f64>>, bool) {
    let orthogonal = count <= d;
    let mut out: Vec<Array1<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v = Array1::from_shape_simple_fn(d, || rng.sample::<f64, _>(StandardNormal));
        if orthogonal {
            for u in &out {
                let proj = u.dot(&v);
                v.scaled_add(-proj, u);
            }
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-8 {
            out.push(v / norm);
        }
    }
    (out, orthogonal)
}

/// Draws a full instance set; identical configs give identical sets.
pub fn generate<T: Scalar>(config: &GenConfig) -> Result<InstanceSet<T>> {
    config.validate()?;
    let sizes = config.class_sizes();
    let d = config.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let total: usize = sizes.iter().sum();
    let (protos, orthogonal) = prototypes(total, d, &mut rng);

    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in &protos {
        for (j, &v) in p.iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    let noise = Normal::new(0.0, config.feature_noise_sigma).expect("validated sigma");

    let mut graphs = Vec::with_capacity(config.class_count * config.graphs_per_class);
    let mut offset = 0;
    for (class, &size) in sizes.iter().enumerate() {
        for g in 0..config.graphs_per_class {
            let drop = rng.random_range(config.inlier_drop_range[0]..=config.inlier_drop_range[1]);
            let mut anchors: Vec<usize> = (0..size).collect();
            anchors.shuffle(&mut rng);
            anchors.truncate(size - drop);
            let outliers = rng.random_range(config.outlier_count_range[0]..=config.outlier_count_range[1]);

            let mut nodes: Vec<(Option<usize>, Vec<f64>)> = Vec::with_capacity(anchors.len() + outliers);
            for &a in &anchors {
                let f = protos[offset + a].iter().map(|&v| v + noise.sample(&mut rng)).collect();
                nodes.push((Some(a), f));
            }
            for _ in 0..outliers {
                let f = (0..d)
                    .map(|j| if hi[j] > lo[j] { rng.random_range(lo[j]..hi[j]) } else { lo[j] })
                    .collect();
                nodes.push((None, f));
            }
            nodes.shuffle(&mut rng);

            let n = nodes.len();
            let mut features = Array2::zeros((n, d));
            let mut labels = Vec::with_capacity(n);
            for (i, (label, f)) in nodes.into_iter().enumerate() {
                for (j, v) in f.into_iter().enumerate() {
                    features[[i, j]] = T::lit(v);
                }
                labels.push(label);
            }
            graphs.push(GraphInstance::new(format!("c{class}-g{g}"), class, features, Some(labels))?);
        }
        offset += size;
    }
    Ok(InstanceSet {
        graphs,
        class_sizes: sizes,
        feature_dim: d,
        orthogonal_prototypes: orthogonal,
        config: Some(config.clone()),
    })
}

/// Planted pairwise ground truth: same class and same anchor. Pairs across
/// classes get the zero matrix.
pub fn derive_pairwise_gt<T: Scalar>(a: &GraphInstance<T>, b: &GraphInstance<T>) -> Result<Matching> {
    let la = a
        .gt_anchors()
        .ok_or_else(|| Error::MissingGroundTruth(a.id().to_string()))?;
    let lb = b
        .gt_anchors()
        .ok_or_else(|| Error::MissingGroundTruth(b.id().to_string()))?;
    if a.class_id() != b.class_id() {
        return Ok(Matching::empty(la.len(), lb.len()));
    }
    let row_to_col = la
        .iter()
        .map(|anchor| anchor.and_then(|k| lb.iter().position(|other| *other == Some(k))))
        .collect();
    Matching::from_assignment(lb.len(), row_to_col)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub class_count: usize,
    pub anchors_per_class: Vec<usize>,
    pub feature_dim: usize,
    pub graph_count: usize,
    pub node_count: usize,
    pub outlier_count: usize,
    pub orthogonal_prototypes: bool,
    pub generator: Option<GenConfig>,
    pub graphs_file: String,
    pub content_sha256: String,
}

/// One line of the graph records file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GraphRecord {
    id: String,
    class_id: usize,
    /// Row-major, shape `[n, d]`.
    features: Vec<Vec<f64>>,
    /// Class-local anchor per node, `-1` for outliers.
    gt_universe: Option<Vec<i64>>,
}

/// Serialized graph records, one JSON object per line.
pub fn encode_graphs<T: Scalar>(set: &InstanceSet<T>) -> Result<String> {
    let mut out = String::new();
    for g in &set.graphs {
        let record = GraphRecord {
            id: g.id().to_string(),
            class_id: g.class_id(),
            features: g
                .features()
                .outer_iter()
                .map(|row| row.iter().map(|v| v.to_f64_lossless()).collect())
                .collect(),
            gt_universe: g
                .gt_anchors()
                .map(|labels| labels.iter().map(|l| l.map_or(-1, |k| k as i64)).collect()),
        };
        out.push_str(&serde_json::to_string(&record)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn manifest<T: Scalar>(set: &InstanceSet<T>, graphs_text: &str) -> Manifest {
    let outliers = set
        .graphs
        .iter()
        .filter_map(|g| g.gt_anchors())
        .map(|l| l.iter().filter(|a| a.is_none()).count())
        .sum();
    Manifest {
        format_version: FORMAT_VERSION,
        class_count: set.class_count(),
        anchors_per_class: set.class_sizes.clone(),
        feature_dim: set.feature_dim,
        graph_count: set.graphs.len(),
        node_count: set.graphs.iter().map(GraphInstance::n_nodes).sum(),
        outlier_count: outliers,
        orthogonal_prototypes: set.orthogonal_prototypes,
        generator: set.config.clone(),
        graphs_file: GRAPHS_FILE.to_string(),
        content_sha256: sha256_hex(graphs_text.as_bytes()),
    }
}

/// Writes `manifest.json` and `graphs.jsonl` into `dir` (created if needed).
pub fn save_instance_set<T: Scalar>(set: &InstanceSet<T>, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let graphs_text = encode_graphs(set)?;
    let manifest = manifest(set, &graphs_text);
    atomic_write(&dir.join(GRAPHS_FILE), graphs_text.as_bytes())?;
    let mut manifest_text = serde_json::to_string_pretty(&manifest)?;
    manifest_text.push('\n');
    atomic_write(&dir.join(MANIFEST_FILE), manifest_text.as_bytes())?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset format version {}",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

pub fn load_instance_set<T: Scalar>(dir: &Path) -> Result<InstanceSet<T>> {
    let manifest = load_manifest(dir)?;
    let text = fs::read_to_string(dir.join(&manifest.graphs_file))?;
    if sha256_hex(text.as_bytes()) != manifest.content_sha256 {
        return Err(Error::Format("graph records do not match manifest hash".into()));
    }
    let mut graphs = Vec::with_capacity(manifest.graph_count);
    for (line_no, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let record: GraphRecord = serde_json::from_str(line)
            .map_err(|e| Error::Format(format!("{GRAPHS_FILE} line {}: {e}", line_no + 1)))?;
        let n = record.features.len();
        let d = record.features.first().map_or(0, Vec::len);
        if d != manifest.feature_dim || record.features.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                what: "record feature width",
                expected: manifest.feature_dim,
                got: d,
            });
        }
        let features = Array2::from_shape_fn((n, d), |(i, j)| T::lit(record.features[i][j]));
        let labels = match record.gt_universe {
            None => None,
            Some(raw) => Some(
                raw.into_iter()
                    .map(|v| match v {
                        -1 => Ok(None),
                        v if v >= 0 => Ok(Some(v as usize)),
                        v => Err(Error::Format(format!("invalid anchor label {v}"))),
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        if record.class_id >= manifest.class_count {
            return Err(Error::IndexOutOfRange {
                what: "class id",
                index: record.class_id,
                len: manifest.class_count,
            });
        }
        graphs.push(GraphInstance::new(record.id, record.class_id, features, labels)?);
    }
    if graphs.len() != manifest.graph_count {
        return Err(Error::Format(format!(
            "manifest lists {} graphs, found {}",
            manifest.graph_count,
            graphs.len()
        )));
    }
    Ok(InstanceSet {
        graphs,
        class_sizes: manifest.anchors_per_class,
        feature_dim: manifest.feature_dim,
        orthogonal_prototypes: manifest.orthogonal_prototypes,
        config: manifest.generator,
    })
}
