use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use universe_match::datagen::{derive_pairwise_gt, generate, load_instance_set, save_instance_set, GenConfig};
use universe_match::gradcheck::run_gradcheck;
use universe_match::graph::node_types;
use universe_match::io::atomic_write;
use universe_match::metrics::{accuracy, clustering_metrics, f1, match_types, ClusterAveraging, MatchTypeCounts};
use universe_match::multigraph::{match_batch, mixture_pipeline, MatchSession};
use universe_match::solver::{infer_universe, reconstruct_pairwise, UniverseAssignment};
use universe_match::train::{init_metric, sample_pairs, train as run_training, Checkpoint, SamplingMode, TrainConfig};
use universe_match::{Graph, Instances, Matching, Metric, NodeType};

use crate::report::RunReport;
use crate::{EvalMode, Sampling};

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn gen(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<RunReport> {
    let start = Instant::now();
    let mut config: GenConfig = read_toml(config_path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let set: Instances = generate(&config)?;
    let manifest = save_instance_set(&set, out)?;
    let mut report = RunReport::new("gen", config.seed, serde_json::to_value(&config)?);
    report.metric("graph_count", manifest.graph_count as f64, "graphs written");
    report.metric("node_count", manifest.node_count as f64, "nodes over all graphs");
    report.metric("outlier_count", manifest.outlier_count as f64, "planted outliers");
    report.metric(
        "orthogonal_prototypes",
        if manifest.orthogonal_prototypes { 1.0 } else { 0.0 },
        "1 when prototypes fit the feature dimension",
    );
    report.artifacts.push(out.display().to_string());
    report.config["content_sha256"] = json!(manifest.content_sha256);
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

pub fn train(data: &Path, config_path: &Path, out: &Path, history_path: &Path, seed: Option<u64>) -> Result<RunReport> {
    let start = Instant::now();
    let mut config: TrainConfig = read_toml(config_path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let set: Instances = load_instance_set(data).with_context(|| format!("loading dataset {}", data.display()))?;
    let (metric, spec) = init_metric(&set, &config)?;
    let (trained, history) = run_training(&metric, &set, &config)?;
    Checkpoint::from_metric(&trained, &spec, &config.hash())
        .save(out)
        .with_context(|| format!("writing checkpoint {}", out.display()))?;
    atomic_write(history_path, history.to_csv().as_bytes())
        .with_context(|| format!("writing history {}", history_path.display()))?;

    let mut report = RunReport::new("train", config.seed, serde_json::to_value(&config)?);
    report.config["config_hash"] = json!(config.hash());
    report.config["n_u"] = json!(spec.n_u());
    report.metric("epochs", history.epochs.len() as f64, "completed epochs");
    report.metric("train_graphs", history.train_graphs.len() as f64, "graphs sampled for training");
    report.metric("heldout_graphs", history.heldout_graphs.len() as f64, "graphs held out");
    if let Some(last) = history.last() {
        report.metric("mean_loss", last.mean_loss, "final epoch, per pair");
        report.metric("heldout_f1", last.heldout_f1, "final epoch, mean over held-out pairs");
        report.metric("heldout_precision", last.heldout_precision, "final epoch");
        report.metric("heldout_recall", last.heldout_recall, "final epoch");
        report.metric("outlier_absorption", last.outlier_absorption, "final epoch, held-out planted outliers");
    }
    report.artifacts.push(out.display().to_string());
    report.artifacts.push(history_path.display().to_string());
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

pub struct EvalArgs {
    pub mode: EvalMode,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub k: usize,
    pub pairs: usize,
    pub graphs: usize,
    pub sampling: Sampling,
    pub seed: u64,
}

fn load_pair(args: &EvalArgs) -> Result<(Instances, Metric, Checkpoint)> {
    let (Some(data), Some(ck_path)) = (&args.data, &args.checkpoint) else {
        bail!("--data and --checkpoint are required for this mode");
    };
    let set: Instances = load_instance_set(data).with_context(|| format!("loading dataset {}", data.display()))?;
    let ck = Checkpoint::load(ck_path).with_context(|| format!("loading checkpoint {}", ck_path.display()))?;
    let metric: Metric = ck.to_metric()?;
    if metric.dim() != set.feature_dim {
        bail!(
            "checkpoint expects {}-dimensional features, dataset has {}",
            metric.dim(),
            set.feature_dim
        );
    }
    Ok((set, metric, ck))
}

pub fn eval(args: &EvalArgs) -> Result<RunReport> {
    let start = Instant::now();
    let config = json!({
        "mode": format!("{:?}", args.mode).to_lowercase(),
        "data": args.data.as_ref().map(|p| p.display().to_string()),
        "checkpoint": args.checkpoint.as_ref().map(|p| p.display().to_string()),
        "k": args.k,
        "pairs": args.pairs,
        "graphs": args.graphs,
        "sampling": format!("{:?}", args.sampling),
    });
    let mut report = RunReport::new("eval", args.seed, config);
    match args.mode {
        EvalMode::Gradcheck => eval_gradcheck(args, &mut report)?,
        mode => {
            let (set, metric, ck) = load_pair(args)?;
            report.config["config_hash"] = json!(ck.config_hash);
            match mode {
                EvalMode::Pairs => eval_pairs(args, &set, &metric, &mut report)?,
                EvalMode::Online => eval_online(args, &set, &metric, &ck, &mut report)?,
                EvalMode::Cluster => eval_cluster(args, &set, &metric, &mut report)?,
                EvalMode::Gradcheck => unreachable!(),
            }
        }
    }
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

fn eval_gradcheck(args: &EvalArgs, report: &mut RunReport) -> Result<()> {
    let r = run_gradcheck(args.seed, args.pairs, 6, 10)?;
    report.metric("instances", r.instances as f64, "random pairs, n_a,n_b <= 6, n_u <= 10");
    report.metric("entries", r.entries as f64, "raw affinity entries checked, both losses");
    report.metric("max_rel_error", r.max_rel_error, format!("central differences, h = {}", r.step));
    report.metric("max_abs_error", r.max_abs_error, "same entries");
    report.check(
        "gradient_fidelity",
        r.max_rel_error < 1e-5,
        format!("max relative error {:.3e} < 1e-5", r.max_rel_error),
    );
    Ok(())
}

struct Inference<'a> {
    set: &'a Instances,
    metric: &'a Metric,
    assignments: HashMap<usize, UniverseAssignment<f64>>,
    corpora: HashMap<usize, Vec<Matching>>,
}

impl<'a> Inference<'a> {
    fn new(set: &'a Instances, metric: &'a Metric) -> Self {
        Self {
            set,
            metric,
            assignments: HashMap::new(),
            corpora: HashMap::new(),
        }
    }

    fn assignment(&mut self, g: usize) -> Result<&UniverseAssignment<f64>> {
        if !self.assignments.contains_key(&g) {
            let graph = &self.set.graphs[g];
            let a = infer_universe(&self.metric.forward_eval(graph.features().view())?, graph.id())?;
            self.assignments.insert(g, a);
        }
        Ok(&self.assignments[&g])
    }

    fn node_types(&mut self, g: usize, pair_gt: &Matching) -> Result<Vec<NodeType>> {
        let graph = &self.set.graphs[g];
        if !self.corpora.contains_key(&g) {
            let corpus = (0..self.set.graphs.len())
                .filter(|&o| o != g)
                .map(|o| derive_pairwise_gt(graph, &self.set.graphs[o]))
                .collect::<universe_match::Result<Vec<_>>>()?;
            self.corpora.insert(g, corpus);
        }
        let others: Vec<&Graph> = (0..self.set.graphs.len())
            .filter(|&o| o != g)
            .map(|o| &self.set.graphs[o])
            .collect();
        let corpus: Vec<(&Graph, &Matching)> = others.into_iter().zip(self.corpora[&g].iter()).collect();
        Ok(node_types(graph, pair_gt, &corpus)?)
    }
}

fn sampling_mode(s: Sampling) -> SamplingMode {
    match s {
        Sampling::SameClass => SamplingMode::SameClass,
        Sampling::HalfMixed => SamplingMode::HalfMixed,
    }
}

fn eval_pairs(args: &EvalArgs, set: &Instances, metric: &Metric, report: &mut RunReport) -> Result<()> {
    let pool: Vec<usize> = (0..set.graphs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let pairs = sample_pairs(set, &pool, sampling_mode(args.sampling), args.pairs, &mut rng)?;
    let mut inf = Inference::new(set, metric);
    let (mut sf, mut sp, mut sr, mut sa) = (0.0, 0.0, 0.0, 0.0);
    let mut types = MatchTypeCounts::default();
    for p in &pairs {
        let xa = inf.assignment(p.a)?.clone();
        let xb = inf.assignment(p.b)?;
        let pred = reconstruct_pairwise(&xa, xb)?;
        let s = f1::<f64>(&pred, &p.gt)?;
        sf += s.f1;
        sp += s.precision;
        sr += s.recall;
        sa += accuracy::<f64>(&pred, &p.gt)?;
        let ta = inf.node_types(p.a, &p.gt)?;
        let tb = inf.node_types(p.b, &p.gt.transpose())?;
        types += match_types(&pred, &ta, &tb, &p.gt)?;
    }
    let n = pairs.len().max(1) as f64;
    report.metric("pairs", pairs.len() as f64, "sampled pairs");
    report.metric("f1", sf / n, "mean over pairs");
    report.metric("precision", sp / n, "mean over pairs");
    report.metric("recall", sr / n, "mean over pairs");
    report.metric("accuracy", sa / n, "mean over pairs, normalized by predicted pairs");
    report.metric("correct", types.correct as f64, "predicted pairs in ground truth");
    report.metric("mismatching", types.mismatching as f64, "wrong pairs between matched inliers");
    report.metric("ill_matching", types.ill_matching as f64, "wrong pairs involving unmatched inliers");
    report.metric("over_matching", types.over_matching as f64, "pairs involving an outlier");
    report.match_types = Some(types);
    Ok(())
}

fn eval_online(
    args: &EvalArgs,
    set: &Instances,
    metric: &Metric,
    ck: &Checkpoint,
    report: &mut RunReport,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let classes: Vec<Vec<usize>> = set.by_class().into_iter().filter(|c| !c.is_empty()).collect();
    let Some(class) = classes.choose(&mut rng) else {
        bail!("dataset has no graphs");
    };
    let mut members = class.clone();
    members.shuffle(&mut rng);
    members.truncate(args.graphs);
    let graphs: Vec<Graph> = members.iter().map(|&g| set.graphs[g].clone()).collect();

    let mut session = MatchSession::new(metric, ck.universe.clone())?;
    for g in &graphs {
        session.add(g)?;
    }
    for (t, cost) in session.costs().iter().enumerate() {
        report.metric("admission_forwards", cost.forwards as f64, format!("graph {}", t + 1));
        report.metric("admission_hungarian_calls", cost.hungarian_calls as f64, format!("graph {}", t + 1));
    }
    let forwards: u64 = session.costs().iter().map(|c| c.forwards).sum();
    report.metric("graphs", graphs.len() as f64, format!("admitted from class {}", graphs.first().map_or(0, |g| g.class_id())));
    report.metric("total_forwards", forwards as f64, "one per admitted graph");
    let constant = session.costs().iter().all(|c| c.forwards == 1 && c.hungarian_calls == 1);
    report.check("constant_cost", constant, "every admission costs 1 forward and 1 Hungarian call");

    let batch = match_batch(metric, &graphs)?;
    let mut same = batch.assignments.as_slice() == session.assignments();
    let m = graphs.len();
    let mut violations = 0usize;
    let (mut sf, mut count) = (0.0, 0usize);
    for i in 0..m {
        for j in 0..m {
            let x = session.pairwise(i, j)?;
            same &= &x == batch.pairwise(i, j)?;
            if i < j {
                sf += f1::<f64>(&x, &derive_pairwise_gt(&graphs[i], &graphs[j])?)?.f1;
                count += 1;
            }
            for k in 0..m {
                let via = session.pairwise(i, k)?.compose(&session.pairwise(k, j)?)?;
                violations += via.pairs().filter(|&(a, b)| !x.contains(a, b)).count();
            }
        }
    }
    report.metric("f1", if count == 0 { 1.0 } else { sf / count as f64 }, "mean over session pairs");
    report.metric("cycle_violations", violations as f64, "entries with X_ik X_kj > X_ij");
    report.check("batch_equivalence", same, "session assignments and pairwise matchings equal batch results");
    report.check("cycle_consistency", violations == 0, format!("{violations} violations"));
    Ok(())
}

fn eval_cluster(args: &EvalArgs, set: &Instances, metric: &Metric, report: &mut RunReport) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let populated: Vec<usize> = set
        .by_class()
        .iter()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .map(|(c, _)| c)
        .collect();
    if populated.len() < args.k {
        bail!("need {} populated classes, dataset has {}", args.k, populated.len());
    }
    let mut chosen: Vec<usize> = populated.choose_multiple(&mut rng, args.k).copied().collect();
    chosen.sort_unstable();
    let graphs: Vec<Graph> = set
        .graphs
        .iter()
        .filter(|g| chosen.contains(&g.class_id()))
        .cloned()
        .collect();
    let gt_labels: Vec<usize> = graphs.iter().map(|g| g.class_id()).collect();
    let result = mixture_pipeline(&graphs, metric, args.k, args.seed)?;
    let m = graphs.len();
    let mut per_f1 = ndarray::Array2::<f64>::ones((m, m));
    let mut per_acc = ndarray::Array2::<f64>::ones((m, m));
    for a in 0..m {
        for b in 0..m {
            if a != b {
                let gt = derive_pairwise_gt(&graphs[a], &graphs[b])?;
                per_f1[[a, b]] = f1::<f64>(&result.pairwise[a][b], &gt)?.f1;
                per_acc[[a, b]] = accuracy::<f64>(&result.pairwise[a][b], &gt)?;
            }
        }
    }
    let cm = clustering_metrics(
        &result.clusters.labels,
        args.k,
        &gt_labels,
        &per_f1,
        &per_acc,
        ClusterAveraging::WithinClusterMean,
    )?;
    report.metric("graphs", m as f64, format!("classes {chosen:?}"));
    report.metric("cp", cm.cp, "clustering purity");
    report.metric("ri", cm.ri, "rand index");
    report.metric("ca", cm.ca, "clustering accuracy");
    report.metric("f1c", cm.f1c, "within-cluster mean pairwise F1");
    report.metric("mac", cm.mac, "within-cluster mean pairwise accuracy");
    report.clustering = Some(cm);
    Ok(())
}

pub fn inspect(path: &Path) -> Result<RunReport> {
    let start = Instant::now();
    let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let metric: Metric = ck.to_metric()?;
    let config = json!({
        "checkpoint": path.display().to_string(),
        "format_version": ck.format_version,
        "weight_shape": ck.weight_shape,
        "universe": ck.universe,
        "nonlinearity": ck.nonlinearity,
        "temperature": ck.temperature,
        "config_hash": ck.config_hash,
    });
    let mut report = RunReport::new("inspect", 0, config);
    let norm = metric.weight().iter().map(|v| v * v).sum::<f64>().sqrt();
    report.metric("feature_dim", metric.dim() as f64, "rows of M");
    report.metric("n_u", metric.n_u() as f64, "universe anchors including the absorbing one");
    report.metric("weight_frobenius_norm", norm, "||M||_F");
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
