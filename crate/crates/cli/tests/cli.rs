use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn equact(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_equact")).args(args).env("EQUACT_THREADS", "1").output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("equact-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = r#"{
  "policy": {
    "eptu": {"level_sizes": [40, 12, 4], "multiplicities": [2, 2, 2], "k_attn": 4, "k_pool": 3,
             "n_rbf": 4, "edge_hidden": 6, "film_hidden": 4, "d_k": 16},
    "field": {"multiplicity": 2, "k": 4, "n_rbf": 4, "edge_hidden": 6, "readout_hidden": 4,
              "train_candidates": 27, "test_candidates": 64}
  },
  "train": {"steps": 4, "batch": 2, "lr": 0.001, "lr_final": 0.001, "log_every": 2}
}"#;

#[test]
fn scalar_only_network_passes_the_check() {
    let dir = scratch("lmax0");
    let report = dir.join("report.json");
    let out = equact(&["check-equivariance", "--lmax", "0", "--trials", "1", "--report", s(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["pass"], true);
    let records = json["records"].as_array().unwrap();
    assert!(records.iter().all(|r| r["pass"] == true && r["layer"].is_string() && r["identity"].is_string() && r["max_deviation"].is_number()));
}

#[test]
fn single_precision_check_passes() {
    let out = equact(&["check-equivariance", "--lmax", "2", "--trials", "1", "--precision", "f32"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn injected_fault_fails_by_name() {
    let out = equact(&["check-equivariance", "--lmax", "1", "--trials", "1", "--break-equivariance"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("attention"));
    let out = equact(&["check-equivariance", "--lmax", "1", "--trials", "1", "--break-equivariance", "plain-film"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ifilm"));
}

#[test]
fn check_reports_are_reproducible() {
    let dir = scratch("repro");
    let (a, b) = (dir.join("a.json"), dir.join("b.json"));
    for p in [&a, &b] {
        assert!(equact(&["check-equivariance", "--lmax", "1", "--trials", "1", "--seed", "5", "--report", s(p)]).status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(equact(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(equact(&["check-equivariance", "--precision", "f16"]).status.code(), Some(2));
    assert_eq!(equact(&["check-equivariance", "--lmax", "9", "--trials", "1"]).status.code(), Some(2));
    let dir = scratch("usage");
    assert_eq!(equact(&["synthesize-data", "--tasks", "juggle-red", "--out", s(&dir.join("x.jsonl"))]).status.code(), Some(2));
}

#[test]
fn synthesized_data_is_deterministic() {
    let dir = scratch("synth");
    let (a, b, c) = (dir.join("a.jsonl"), dir.join("b.jsonl"), dir.join("c.jsonl"));
    for (p, seed) in [(&a, "3"), (&b, "3"), (&c, "4")] {
        let out = equact(&["synthesize-data", "--tasks", "touch-red,place-above-blue", "--demos-per-task", "2", "--mode", "se3", "--seed", seed, "--out", s(p)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert_ne!(bytes, std::fs::read(&c).unwrap());
    assert_eq!(bytes.iter().filter(|b| **b == b'\n').count(), 4);
}

#[test]
fn malformed_data_is_reported_with_its_record() {
    let dir = scratch("malformed");
    let data = dir.join("d.jsonl");
    assert!(equact(&["synthesize-data", "--tasks", "touch-red", "--demos-per-task", "1", "--out", s(&data)]).status.success());
    let mut text = std::fs::read_to_string(&data).unwrap();
    text.push_str("{\"version\": 1, \"instruction\": \"touch-red\"}\n");
    std::fs::write(&data, text).unwrap();
    let out = equact(&["train-toy", "--data", s(&data), "--out", s(&dir.join("ck.bin"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("record 2"));
    let out = equact(&["eval-toy", "--checkpoint", s(&dir.join("missing.bin"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn train_then_evaluate_is_deterministic() {
    let dir = scratch("train");
    let data = dir.join("d.jsonl");
    let cfg = dir.join("tiny.json");
    std::fs::write(&cfg, TINY).unwrap();
    assert!(equact(&["synthesize-data", "--tasks", "touch-red,touch-blue", "--demos-per-task", "2", "--out", s(&data)]).status.success());
    let mut checkpoints = Vec::new();
    for name in ["a.bin", "b.bin"] {
        let ck = dir.join(name);
        let out = equact(&["train-toy", "--data", s(&data), "--config", s(&cfg), "--out", s(&ck)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        checkpoints.push((std::fs::read(&ck).unwrap(), std::fs::read(ck.with_extension("report.json")).unwrap()));
    }
    assert_eq!(checkpoints[0], checkpoints[1]);
    let out = equact(&["eval-toy", "--checkpoint", s(&dir.join("a.bin")), "--scenes", "1", "--mode", "se3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("touch-red") && stdout.contains("average"), "{stdout}");
}

#[test]
fn bench_reports_wall_time_and_memory() {
    let out = equact(&["bench", "--layer", "smaxpool", "--sizes", "64,16", "--repeats", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("smaxpool 64->16") && stdout.contains("ms/call") && stdout.contains("peak"), "{stdout}");
}
