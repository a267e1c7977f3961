use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nlsurf::tensor::read_tensor;

const GRID16: &str = r#"{"side": 16, "domain_min": [-10, -10], "domain_max": [10, 10]}"#;

fn nlsurf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlsurf"))
        .current_dir(dir)
        .args(args)
        .env_remove("NL_LOG")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = nlsurf(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn write_config(dir: &Path, text: &str) {
    fs::write(dir.join("cfg.json"), text).unwrap();
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

/// Tiny GP pipeline: dataset, one-epoch model and calibration.
fn trained(dir: &Path) {
    write_config(
        dir,
        &format!(
            r#"{{"seed": 2, "sim": {{"grid": {GRID16}, "m": 6, "n": 3}}, "calibrate": {{"m": 6, "n": 3}},
                "train": {{"epochs": 1, "batch_size": 12, "micro_batch": 12}},
                "eval": {{"grid": {GRID16}, "surface_counts": [6, 6]}}}}"#
        ),
    );
    ok(dir, &["--config", "cfg.json", "simulate", "--out", "data"]);
    ok(dir, &["--config", "cfg.json", "simulate", "--calibration", "--out", "cal"]);
    ok(dir, &["--config", "cfg.json", "train", "--data", "data", "--out", "model"]);
    ok(dir, &["--config", "cfg.json", "calibrate", "--model", "model", "--data", "cal", "--out", "platt"]);
}

#[test]
fn simulate_writes_balanced_classes_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(dir, r#"{"sim": {"grid": {"side": 5, "domain_min": [0, 0], "domain_max": [4, 4]}, "m": 2, "n": 3}}"#);
    ok(dir, &["--config", "cfg.json", "--seed", "9", "simulate", "--out", "a"]);
    ok(dir, &["--config", "cfg.json", "--seed", "9", "simulate", "--out", "b"]);
    let labels = read_tensor(dir.join("a/labels.nlt")).unwrap();
    assert_eq!(labels.data.iter().filter(|&&l| l == 1.0).count(), 6);
    assert_eq!(labels.data.iter().filter(|&&l| l == 2.0).count(), 6);
    for f in ["fields.nlt", "params.nlt", "permutations.nlt", "manifest.json", "provenance.json"] {
        assert_eq!(fs::read(dir.join("a").join(f)).unwrap(), fs::read(dir.join("b").join(f)).unwrap(), "{f}");
    }
    ok(dir, &["--config", "cfg.json", "--seed", "10", "simulate", "--out", "c"]);
    assert_ne!(fs::read(dir.join("a/fields.nlt")).unwrap(), fs::read(dir.join("c/fields.nlt")).unwrap());
}

#[test]
fn brown_resnick_dataset_records_log_transform() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(dir, r#"{"sim": {"grid": {"side": 4, "domain_min": [0, 0], "domain_max": [3, 3]}, "m": 2, "n": 2}}"#);
    ok(dir, &["--config", "cfg.json", "--process", "br", "simulate", "--out", "br"]);
    let manifest = json(&dir.join("br/manifest.json"));
    assert_eq!(manifest["input_transform"], "log");
    assert_eq!(manifest["process"], "brown-resnick");
}

#[test]
fn unknown_config_keys_exit_with_configuration_code() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(dir, r#"{"sim": {"m": 2, "nn": 3}}"#);
    let out = nlsurf(dir, &["--config", "cfg.json", "simulate", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nn"));
    assert!(!dir.join("x").exists());
}

#[test]
fn missing_upstream_artifact_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = nlsurf(dir, &["train", "--data", "nowhere", "--out", "model"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("dataset not found"), "{err}");
    assert!(!dir.join("model").exists());
}

#[test]
fn surface_mle_and_region_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    trained(dir);
    let base = ["--config", "cfg.json", "surface", "--field", "data/fields.nlt", "--index", "4", "--model", "model"];
    ok(dir, &[&base[..], &["--no-calibration", "--out", "raw"]].concat());
    ok(dir, &[&base[..], &["--platt", "platt", "--out", "cal"]].concat());
    assert_eq!(json(&dir.join("raw/manifest.json"))["kind"], "neural-uncalibrated");
    assert_eq!(json(&dir.join("cal/manifest.json"))["kind"], "neural-calibrated");
    assert_eq!(read_tensor(dir.join("raw/surface.nlt")).unwrap().shape, vec![6, 6]);

    // a calibrated surface needs the calibration artifact
    let out = nlsurf(dir, &[&base[..], &["--out", "nope"]].concat());
    assert_eq!(out.status.code(), Some(2));

    ok(dir, &["--config", "cfg.json", "mle", "--surface", "cal", "--out", "mle"]);
    let mle = json(&dir.join("mle/mle.json"));
    assert_eq!(mle["theta"].as_array().unwrap().len(), 2);

    ok(dir, &["--config", "cfg.json", "region", "--surface", "cal", "--alpha", "0.05", "--out", "region"]);
    let cutoff = json(&dir.join("region/manifest.json"))["cutoff"].as_f64().unwrap();
    assert!((cutoff - 5.99146).abs() < 1e-5, "{cutoff}");
    let mask = read_tensor(dir.join("region/mask.nlt")).unwrap();
    assert!(mask.data.iter().all(|&m| m == 0.0 || m == 1.0));
    assert!(mask.data.iter().any(|&m| m == 1.0));

    let gp = nlsurf(dir, &["--config", "cfg.json", "surface", "--field", "data/fields.nlt", "--method", "gp-exact", "--out", "gp"]);
    assert!(gp.status.success());
    assert_eq!(json(&dir.join("gp/manifest.json"))["kind"], "gp-exact");
    let pairwise = nlsurf(dir, &["--config", "cfg.json", "surface", "--field", "data/fields.nlt", "--method", "pairwise", "--out", "pw"]);
    assert_eq!(pairwise.status.code(), Some(2));
}

#[test]
fn corrupted_model_is_a_format_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    trained(dir);
    fs::write(dir.join("model/layer3_weight.nlt"), b"NLT1garbage").unwrap();
    let out = nlsurf(dir, &["--config", "cfg.json", "calibrate", "--model", "model", "--data", "cal", "--out", "p2"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(!dir.join("p2").exists());
}

#[test]
fn model_from_another_grid_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    trained(dir);
    fs::write(
        dir.join("other.json"),
        r#"{"sim": {"grid": {"side": 16, "domain_min": [0, 0], "domain_max": [1, 1]}, "m": 4, "n": 2}}"#,
    )
    .unwrap();
    ok(dir, &["--config", "other.json", "simulate", "--out", "other"]);
    let out = nlsurf(dir, &["--config", "other.json", "calibrate", "--model", "model", "--data", "other", "--out", "p"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid"));
}

#[test]
fn study_emits_one_row_per_method_and_true_parameter() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(
        dir,
        r#"{"eval": {"grid": {"side": 4, "domain_min": [-10, -10], "domain_max": [10, 10]}, "replicates": 1,
                     "methods": [{"method": "gp-exact"}]}}"#,
    );
    ok(dir, &["--config", "cfg.json", "study", "--out", "study"]);
    let text = fs::read_to_string(dir.join("study/results.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 81);
    assert!(text.lines().skip(1).all(|l| l.starts_with("gp-exact,")));

    let out = nlsurf(dir, &["study", "--out", "s2"]);
    assert_eq!(out.status.code(), Some(2), "default methods need a model");
}
