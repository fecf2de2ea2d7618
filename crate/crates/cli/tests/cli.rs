use std::path::Path;
use std::process::{Command, Output};

use gin::experiment::{ExperimentConfig, CONFIG_FILE};

const TINY: &str = r#"{
  "network": {"kind": "ws", "n": 10, "k": 4, "p_rewire": 0.2},
  "dynamics": {"kind": "cmn", "coupling": 0.2, "r": 3.5},
  "samples": 4, "steps": 20, "split_ratios": [10, 1, 1], "n_hidden": 2, "seed": 1,
  "train": {"task": "complete-partial", "batch": 16, "epochs": 3, "hidden_width": 8, "val_windows": 4},
  "match_restarts": 1, "refit_epochs": 2, "eval_windows": 4
}"#;

fn gin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gin"))
        .args(args)
        .env("GIN_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = gin(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn setup(dir: &Path) -> String {
    let cfg = dir.join("in.json");
    std::fs::write(&cfg, TINY).unwrap();
    cfg.to_str().unwrap().to_string()
}

#[test]
fn generate_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["generate", "--config", &cfg, "--out", a.to_str().unwrap()]);
    ok(&["generate", "--config", &cfg, "--out", b.to_str().unwrap()]);
    for f in ["graph.csv", "partition.json", "trajectories.csv", "dataset.json", "split.json", CONFIG_FILE] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn stages_chain_and_config_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = dir.path().join("run");
    let o = out.to_str().unwrap();
    ok(&["generate", "--config", &cfg, "--out", o, "--seed", "7"]);
    let saved = ExperimentConfig::load(out.join(CONFIG_FILE)).unwrap();
    assert_eq!(saved.seed, 7);
    let text = std::fs::read_to_string(out.join(CONFIG_FILE)).unwrap();
    assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), saved);

    ok(&["train", "--out", o]);
    assert!(out.join("model/params.bin").exists());
    assert!(out.join("train_log.csv").exists());
    let matched: serde_json::Value = serde_json::from_str(&ok(&["evaluate", "--out", o])).unwrap();
    assert_eq!(matched["matched"], true);
    assert!(out.join("match.json").exists() && out.join("contrast.csv").exists());
    let plain: serde_json::Value = serde_json::from_str(&ok(&["evaluate", "--out", o, "--no-match"])).unwrap();
    assert_eq!(plain["matched"], false);
    let base: serde_json::Value = serde_json::from_str(&ok(&["baseline", "--out", o])).unwrap();
    assert!(base["mi_auc"].is_number() && base["pcorr_auc"].is_number());
}

#[test]
fn match_of_identical_files_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = dir.path().join("run");
    ok(&["generate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let g = out.join("graph.csv");
    let res: serde_json::Value = serde_json::from_str(&ok(&[
        "match",
        "--a",
        g.to_str().unwrap(),
        "--b",
        g.to_str().unwrap(),
        "--partition",
        out.join("partition.json").to_str().unwrap(),
    ]))
    .unwrap();
    assert_eq!(res["permutation"], serde_json::json!([0, 1]));
    assert_eq!(res["converged"], true);
}

#[test]
fn exit_codes_name_failure_classes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, TINY.replace("\"samples\"", "\"sample\"")).unwrap();
    let out = dir.path().join("x");
    let o = out.to_str().unwrap();
    assert_eq!(gin(&["generate", "--config", bad.to_str().unwrap(), "--out", o]).status.code(), Some(2));

    let cfg = setup(dir.path());
    let r = gin(&["train", "--config", &cfg, "--out", o]);
    assert_eq!(r.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&r.stderr).contains("dataset.json"));

    let r = gin(&["generate", "--config", &cfg, "--out", o, "--task", "reconstruct"]);
    assert_eq!(r.status.code(), Some(2));
    assert_eq!(gin(&["sweep", "--config", &cfg, "--out", o, "--fractions", "0.0"]).status.code(), Some(2));
}

#[test]
fn sweep_writes_one_row_per_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = dir.path().join("s");
    ok(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--fractions", "0.1"]);
    let text = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("fraction,n_hidden,auc"));
}

#[test]
fn run_all_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = dir.path().join("all");
    let summary: serde_json::Value =
        serde_json::from_str(&ok(&["run-all", "--config", &cfg, "--out", out.to_str().unwrap()])).unwrap();
    assert!(summary["auc"].is_number());
    for f in ["report.json", "unmatched/report.json", "baselines.json", "probabilities.csv", "structure.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
}
