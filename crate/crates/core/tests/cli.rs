//! End-to-end runs of the `cocge` binary.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use tempfile::TempDir;

fn cocge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cocge")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = cocge(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A synthetic dataset and a short open-mode run, shared by the tests.
struct Fixture {
    _dir: TempDir,
    data: PathBuf,
    run: PathBuf,
}

fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let data = dir.path().join("data");
        let run = dir.path().join("run");
        ok(&["synth", "--out", s(&data), "--seed", "4"]);
        ok(&["train", "--data", s(&data), "--out", s(&run), "--epochs", "3"]);
        Fixture { _dir: dir, data, run }
    })
}

fn file_names(dir: &Path) -> BTreeSet<String> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect()
}

#[test]
fn synth_writes_dataset_files_deterministically() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["synth", "--out", s(&a), "--seed", "9"]);
    ok(&["synth", "--out", s(&b), "--seed", "9"]);
    let names = file_names(&a);
    let expected: BTreeSet<String> = [
        "splits.txt",
        "features.bin",
        "features.json",
        "embeddings.txt",
        "feasible_gt.csv",
        "manifest.json",
    ]
    .into_iter()
    .map(String::from)
    .collect();
    assert_eq!(names, expected);
    for name in &names {
        let (x, y) = (std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap());
        // The manifest names its own output directory.
        if name != "manifest.json" {
            assert_eq!(x, y, "{name} differs");
        }
    }
    let gt = std::fs::read_to_string(a.join("feasible_gt.csv")).unwrap();
    assert!(gt.starts_with("state,object,feasible,seen\n"));
    assert_eq!(gt.lines().count(), 1 + 12 * 12);
}

#[test]
fn invalid_group_is_reported() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(
        &cfg,
        "[synth]\nn_states = 4\nn_objects = 4\nobject_groups = [[0, 1], [2, 9]]\napplicable = [[0, 1], [2, 3]]\n",
    )
    .unwrap();
    let out = cocge(&["synth", "--config", s(&cfg), "--out", s(&tmp.path().join("d"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("object group 1"), "{err}");
}

#[test]
fn missing_data_directory_exits_2() {
    let tmp = TempDir::new().unwrap();
    let out = cocge(&["train", "--data", s(&tmp.path().join("nope")), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn dry_run_prints_resolved_config() {
    let f = fixture();
    let text = ok(&["train", "--data", s(&f.data), "--dry-run", "--mode", "closed", "--epochs", "7"]);
    let config = cocge::config::Config::parse(&text).unwrap();
    assert_eq!(config.train.epochs, 7);
    assert_eq!(config.train.mode, cocge::trainer::TrainMode::Closed);
    assert_eq!(config.data.dir.as_deref(), Some(f.data.as_path()));
}

#[test]
fn train_writes_run_files() {
    let f = fixture();
    for name in ["checkpoint.bin", "metrics.jsonl", "manifest.json"] {
        assert!(f.run.join(name).is_file(), "{name}");
    }
    let log = std::fs::read_to_string(f.run.join("metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(f.run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert!(manifest.get("wall_clock_secs").is_none());
}

#[test]
fn eval_report_and_curve() {
    let f = fixture();
    let curve = f.run.join("curve.csv");
    let ckpt = f.run.join("checkpoint.bin");
    let text = ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&f.data), "--open", "--curve", s(&curve)]);
    let report: Value = serde_json::from_str(&text).unwrap();
    let auc = report["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    assert_eq!(report["world"], "open");

    let csv = std::fs::read_to_string(&curve).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("bias,seen_acc,unseen_acc"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), report["curve"].as_array().unwrap().len());
    assert_eq!(rows.first().unwrap()[0], "-inf");
    assert_eq!(rows.last().unwrap()[0], "inf");
}

#[test]
fn eval_hard_mask_auto_tau() {
    let f = fixture();
    let ckpt = f.run.join("checkpoint.bin");
    let base = ["eval", "--checkpoint", s(&ckpt), "--data", s(&f.data), "--open"];
    let plain: Value = serde_json::from_str(&ok(&base)).unwrap();
    let mut args = base.to_vec();
    args.extend(["--hard-mask", "--tau", "auto"]);
    let masked: Value = serde_json::from_str(&ok(&args)).unwrap();
    let tau = masked["tau"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&tau));
    assert_eq!(plain["curve"][0]["seen_acc"], masked["curve"][0]["seen_acc"]);
}

#[test]
fn feasibility_listing() {
    let f = fixture();
    let ckpt = f.run.join("checkpoint.bin");
    let csv = ok(&["feasibility", "--checkpoint", s(&ckpt), "--data", s(&f.data)]);
    let seen: BTreeSet<(String, String)> = std::fs::read_to_string(f.data.join("feasible_gt.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .filter(|l| l.ends_with(",1"))
        .map(|l| {
            let v: Vec<&str> = l.split(',').collect();
            (v[0].to_string(), v[1].to_string())
        })
        .collect();
    assert!(!seen.is_empty());
    let mut rows = 0;
    for line in csv.lines().skip(1) {
        let v: Vec<&str> = line.split(',').collect();
        let rho: f64 = v[2].parse().unwrap();
        assert!((-1.0..=1.0).contains(&rho));
        let is_seen = seen.contains(&(v[0].to_string(), v[1].to_string()));
        assert_eq!(v[3] == "1", is_seen, "{line}");
        if is_seen {
            assert_eq!(rho, 1.0);
        }
        rows += 1;
    }
    assert_eq!(rows, 144);

    let ext = ok(&["feasibility", "--checkpoint", s(&ckpt), "--data", s(&f.data), "--extremes", "--k", "3"]);
    let mut lines = ext.lines();
    assert_eq!(lines.next(), Some("object,rank,top_state,top_rho,bottom_state,bottom_rho"));
    let mut per_object: std::collections::BTreeMap<String, BTreeSet<String>> = Default::default();
    for line in lines {
        let v: Vec<&str> = line.split(',').collect();
        let (top, bottom): (f64, f64) = (v[3].parse().unwrap(), v[5].parse().unwrap());
        assert!(top >= bottom);
        let states = per_object.entry(v[0].to_string()).or_default();
        states.insert(format!("top {}", v[2]));
        states.insert(format!("bottom {}", v[4]));
    }
    assert_eq!(per_object.len(), 12);
    assert!(per_object.values().all(|s| s.len() == 6));
}

#[test]
fn retrieval_is_sorted_and_capped() {
    let f = fixture();
    let ckpt = f.run.join("checkpoint.bin");
    let base = [
        "retrieve", "--checkpoint", s(&ckpt), "--data", s(&f.data), "--state", "state00", "--object", "object00",
    ];
    let mut args = base.to_vec();
    args.extend(["--k", "100000"]);
    let all: Vec<String> = ok(&args).lines().map(String::from).collect();
    let n_test = cocge::dataio::Dataset::load_dir(&f.data).unwrap().test.len();
    assert_eq!(all.len(), n_test);
    assert_eq!(all.iter().collect::<BTreeSet<_>>().len(), n_test);

    let top: Vec<String> = ok(&base).lines().map(String::from).collect();
    assert_eq!(top, all[..5]);

    // Cosines recomputed by hand must be non-increasing along the listing.
    let data = cocge::dataio::Dataset::load_dir(&f.data).unwrap();
    let ckpt = cocge::network::load_checkpoint(&ckpt).unwrap();
    let graph = cocge::trainer::eval_graph(&ckpt, &data, cocge::graph::World::Open).unwrap();
    let col = graph.index.composition_column((0, 0)).unwrap();
    let query = cocge::network::composition_embeddings(&ckpt.params, &graph).unwrap().row(col).to_owned();
    let images = cocge::network::embed_images(&ckpt.params, &data.test.features).unwrap();
    let cos = |i: usize| {
        let y = images.row(i);
        let dot: f64 = y.iter().zip(&query).map(|(a, b)| a * b).sum();
        let ny: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nq: f64 = query.iter().map(|a| a * a).sum::<f64>().sqrt();
        dot / (ny * nq)
    };
    let ranked: Vec<f64> = all
        .iter()
        .map(|id| cos(data.test.ids.iter().position(|x| x == id).unwrap()))
        .collect();
    assert!(ranked.windows(2).all(|w| w[0] >= w[1] - 1e-12));

    let mut bad = base.to_vec();
    bad[6] = "no_such_state";
    let out = cocge(&bad);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_state"));
}
