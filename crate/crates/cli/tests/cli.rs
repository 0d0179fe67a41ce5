use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use universe_match::datagen::load_instance_set;
use universe_match::train::{init_metric, Checkpoint, TrainConfig};
use universe_match::{Instances, Metric};

const GEN: &str = r#"
class_count = 2
anchors_per_class = [6]
feature_dim = 32
graphs_per_class = 8
inlier_drop_range = [0, 1]
outlier_count_range = [0, 1]
feature_noise_sigma = 0.02
seed = 5
"#;

const TRAIN: &str = r#"
epochs = 8
pairs_per_epoch = 256
batch_size = 8
learning_rate = 0.02
universe = "node-merged"
seed = 3
"#;

fn unimatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unimatch"))
        .args(args)
        .env_remove("UNIMATCH_SEED")
        .env_remove("UNIMATCH_THREADS")
        .output()
        .unwrap()
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: stdout {} stderr {}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

fn metric(report: &Value, name: &str) -> f64 {
    report["metrics"]
        .as_array()
        .unwrap()
        .iter()
        .find(|m| m["metric"] == name)
        .unwrap_or_else(|| panic!("no metric {name}"))["value"]
        .as_f64()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: TempDir,
    data: PathBuf,
}

fn generated() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "gen.toml", GEN);
    let data = dir.path().join("data");
    let out = unimatch(&["gen", "--config", s(&cfg), "--out", s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    Workspace { dir, data }
}

fn trained(ws: &Workspace, train_toml: &str) -> (PathBuf, Value) {
    let cfg = write(ws.dir.path(), "train.toml", train_toml);
    let ck = ws.dir.path().join("model.json");
    let out = unimatch(&["train", "--data", s(&ws.data), "--config", s(&cfg), "--out", s(&ck)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (ck, report(&out))
}

#[test]
fn gen_is_deterministic_and_reports_counts() {
    let a = generated();
    let b = generated();
    let ra = report(&unimatch(&[
        "gen",
        "--config",
        s(&write(a.dir.path(), "gen.toml", GEN)),
        "--out",
        s(&a.data),
    ]));
    let manifest = |dir: &Path| fs::read_to_string(dir.join("manifest.json")).unwrap();
    assert_eq!(manifest(&a.data), manifest(&b.data));
    assert_eq!(metric(&ra, "graph_count"), 16.0);
    assert_eq!(ra["schema_version"], 1);
    assert_eq!(ra["config"]["feature_dim"], 32);
    assert_eq!(ra["config"]["content_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn gen_rejects_drop_bound_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "gen.toml", &GEN.replace("[0, 1]\noutlier", "[0, 6]\noutlier"));
    let out = unimatch(&["gen", "--config", s(&cfg), "--out", s(&dir.path().join("data"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("inlier_drop_range"));
    assert!(!dir.path().join("data").exists());
}

#[test]
fn seed_from_environment_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "gen.toml", GEN);
    let out = Command::new(env!("CARGO_BIN_EXE_unimatch"))
        .args(["gen", "--config", s(&cfg), "--out", s(&dir.path().join("data"))])
        .env("UNIMATCH_SEED", "77")
        .output()
        .unwrap();
    assert!(out.status.success());
    let r = report(&out);
    assert_eq!(r["seed"], 77);
    assert_eq!(r["config"]["seed"], 77);
}

#[test]
fn zero_epochs_writes_the_initialization() {
    let ws = generated();
    let toml = TRAIN.replace("epochs = 8", "epochs = 0");
    let (ck, r) = trained(&ws, &toml);
    assert_eq!(metric(&r, "epochs"), 0.0);
    let set: Instances = load_instance_set(&ws.data).unwrap();
    let cfg: TrainConfig = toml::from_str(&toml).unwrap();
    let (init, _): (Metric, _) = init_metric(&set, &cfg).unwrap();
    assert_eq!(Checkpoint::load(&ck).unwrap().to_metric::<f64>().unwrap(), init);
    let history = fs::read_to_string(ck.with_extension("json.history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1);
}

#[test]
fn training_on_planted_data_reaches_high_f1() {
    let ws = generated();
    let (ck, r) = trained(&ws, TRAIN);
    assert!(metric(&r, "heldout_f1") >= 0.99, "{r}");
    let history = fs::read_to_string(ck.with_extension("json.history.csv")).unwrap();
    assert!(history.starts_with("epoch,mean_loss,heldout_f1"));
    assert_eq!(history.lines().count(), 9);

    let out = unimatch(&["eval", "--mode", "pairs", "--data", s(&ws.data), "--checkpoint", s(&ck), "--seed", "1"]);
    assert!(out.status.success());
    let r = report(&out);
    assert!(metric(&r, "f1") >= 0.99);
    let types = &r["match_types"];
    let total: u64 = ["correct", "mismatching", "ill_matching", "over_matching"]
        .iter()
        .map(|k| types[*k].as_u64().unwrap())
        .sum();
    assert_eq!(total as f64, metric(&r, "correct") + metric(&r, "mismatching") + metric(&r, "ill_matching") + metric(&r, "over_matching"));

    let csv_path = ws.dir.path().join("report.csv");
    let json_path = ws.dir.path().join("report.json");
    let out = unimatch(&[
        "eval",
        "--mode",
        "online",
        "--data",
        s(&ws.data),
        "--checkpoint",
        s(&ck),
        "--graphs",
        "15",
        "--report",
        s(&json_path),
        "--csv",
        s(&csv_path),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let r: Value = serde_json::from_str(&fs::read_to_string(&json_path).unwrap()).unwrap();
    let graphs = metric(&r, "graphs");
    assert_eq!(metric(&r, "total_forwards"), graphs);
    assert!(r["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
    let csv = fs::read_to_string(&csv_path).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "metric,value,context");
    assert!(csv.contains("check:batch_equivalence,1,"));

    let out = unimatch(&["eval", "--mode", "cluster", "--k", "2", "--data", s(&ws.data), "--checkpoint", s(&ck)]);
    assert!(out.status.success());
    let r = report(&out);
    for m in ["cp", "ri", "f1c", "mac"] {
        assert!((0.0..=1.0).contains(&metric(&r, m)));
    }
    assert!(metric(&r, "ca") <= 1.0);
    assert!(r["clustering"].is_object());

    let out = unimatch(&["inspect", "--checkpoint", s(&ck)]);
    assert!(out.status.success());
    let r = report(&out);
    assert_eq!(metric(&r, "feature_dim"), 32.0);
    assert_eq!(metric(&r, "n_u"), 13.0);
}

#[test]
fn online_session_of_fifteen_logs_fifteen_forwards() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "gen.toml", &GEN.replace("graphs_per_class = 8", "graphs_per_class = 15"));
    let data = dir.path().join("data");
    assert!(unimatch(&["gen", "--config", s(&cfg), "--out", s(&data)]).status.success());
    let ws = Workspace { dir, data };
    let (ck, _) = trained(&ws, &TRAIN.replace("epochs = 8", "epochs = 1"));
    let out = unimatch(&["eval", "--mode", "online", "--data", s(&ws.data), "--checkpoint", s(&ck)]);
    assert!(out.status.success());
    let r = report(&out);
    assert_eq!(metric(&r, "graphs"), 15.0);
    assert_eq!(metric(&r, "total_forwards"), 15.0);
    let per_graph = r["metrics"].as_array().unwrap().iter().filter(|m| m["metric"] == "admission_forwards");
    assert!(per_graph.clone().count() == 15 && per_graph.into_iter().all(|m| m["value"] == 1.0));
}

#[test]
fn gradcheck_reports_small_error() {
    let out = unimatch(&["eval", "--mode", "gradcheck", "--pairs", "100", "--seed", "4"]);
    assert!(out.status.success());
    let r = report(&out);
    assert!(metric(&r, "max_rel_error") < 1e-5);
    assert!(String::from_utf8_lossy(&out.stderr).contains("PASS gradient_fidelity"));
}

#[test]
fn unwritable_checkpoint_leaves_no_partial_file() {
    let ws = generated();
    let cfg = write(ws.dir.path(), "train.toml", &TRAIN.replace("epochs = 8", "epochs = 1"));
    let missing = ws.dir.path().join("no-such-dir");
    let ck = missing.join("model.json");
    let out = unimatch(&["train", "--data", s(&ws.data), "--config", s(&cfg), "--out", s(&ck)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
    assert!(!missing.exists());
    let leftovers: Vec<_> = fs::read_dir(ws.dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.contains("model"))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn eval_requires_checkpoint_and_known_mode() {
    assert_eq!(unimatch(&["eval", "--mode", "pairs", "--data", "x"]).status.code(), Some(2));
    assert_eq!(unimatch(&["eval", "--mode", "bogus"]).status.code(), Some(2));
}

#[test]
fn mismatched_checkpoint_dimension_is_an_error() {
    let ws = generated();
    let (ck, _) = trained(&ws, &TRAIN.replace("epochs = 8", "epochs = 0"));
    let cfg = write(ws.dir.path(), "other.toml", &GEN.replace("feature_dim = 32", "feature_dim = 16"));
    let other = ws.dir.path().join("other");
    assert!(unimatch(&["gen", "--config", s(&cfg), "--out", s(&other)]).status.success());
    let out = unimatch(&["eval", "--mode", "pairs", "--data", s(&other), "--checkpoint", s(&ck)]);
    assert_eq!(out.status.code(), Some(2));
}
