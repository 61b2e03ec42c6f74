use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn stratflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stratflow")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> serde_json::Value {
    let out = stratflow(args);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    ok(&["generate", "--testbed", "example1", "--n", "1000", "--seed", "5", "--out", out, "--file", "a.csv"]);
    ok(&["generate", "--testbed", "example1", "--n", "1000", "--seed", "5", "--out", out, "--file", "b.csv"]);
    let a = fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read_to_string(dir.path().join("b.csv")).unwrap());
    assert_eq!(a.lines().count(), 1001);
    assert!(!a.contains('\r'));
    ok(&["generate", "--testbed", "synth30", "--n", "0", "--out", out, "--file", "empty.csv"]);
    assert_eq!(fs::read_to_string(dir.path().join("empty.csv")).unwrap().lines().count(), 1);
}

#[test]
fn unknown_testbed_is_rejected() {
    let out = stratflow(&["generate", "--testbed", "example9", "--n", "3"]);
    assert!(!out.status.success());
}

#[test]
fn gmm_training_writes_model_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    ok(&["generate", "--testbed", "example1", "--n", "500", "--out", out]);
    let data = dir.path().join("data.csv");
    let summary = ok(&["train", "--data", s(&data), "--model", "gmm", "--k", "4", "--max-iters", "40", "--out", out]);
    assert_eq!(summary["model"], "gmm(k=4)");
    let model: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("model.json")).unwrap()).unwrap();
    assert_eq!(model["map"]["weights"].as_array().unwrap().len(), 4);
    assert!(fs::read_to_string(dir.path().join("trace.csv")).unwrap().starts_with("iteration,objective\n"));
}

#[test]
fn estimate_and_experiment_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"testbed": "example1", "functions": ["j+1.2"], "model": {"kind": "exact"},
            "schemes": [{"kind": "cmc"}, {"kind": "cartesian", "m0": 4}],
            "allocations": [{"kind": "prop"}, {"kind": "opt", "pilot_fraction": 0.125}],
            "budgets": [4096], "repetitions": 3, "seed": 11}"#,
    )
    .unwrap();
    let out = dir.path().join("est");
    let est = ok(&["estimate", "--config", s(&cfg), "--out", s(&out)]);
    let rows = est["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2]["report"]["pilot_budget"], 512);
    assert!(out.join("run.ndjson").exists());

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["experiment", "--config", s(&cfg), "--out", s(&a), "--threads", "2"]);
    ok(&["experiment", "--config", s(&cfg), "--out", s(&b), "--threads", "1"]);
    for f in ["aggregate.csv", "repetitions.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let agg = fs::read_to_string(a.join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 4);

    ok(&["experiment", "--config", s(&cfg), "--out", s(&b), "--seed", "12"]);
    assert_ne!(fs::read(a.join("aggregate.csv")).unwrap(), fs::read(b.join("aggregate.csv")).unwrap());
}

#[test]
fn config_with_unknown_key_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"testbed": "example1", "functions": ["j+1.2"], "model": {"kind": "exact"},
            "schemes": [{"kind": "cmc"}], "budgets": [100], "colour": "blue"}"#,
    )
    .unwrap();
    let out = stratflow(&["estimate", "--config", s(&cfg), "--out", s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn ci_lines_writes_long_format() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"testbed": "example1", "functions": ["j+1.2"], "model": {"kind": "exact"},
            "schemes": [{"kind": "cmc"}], "budgets": [1024], "repetitions": 20}"#,
    )
    .unwrap();
    let res = ok(&["ci-lines", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(res["summary"][0]["repetitions"], 20);
    let lines = fs::read_to_string(dir.path().join("ci_lines.csv")).unwrap();
    assert_eq!(lines.lines().count(), 21);
    for line in lines.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let (lo, hi): (f64, f64) = (cells[6].parse().unwrap(), cells[7].parse().unwrap());
        let truth = (-1.2f64 * 2.2).exp() / 2.2;
        assert_eq!(cells[8] == "1", lo <= truth && truth <= hi);
    }
}

#[test]
fn validate_strata_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let pass = ok(&["validate-strata", "--scheme", r#"{"kind":"cartesian","m0":4}"#, "--dim", "2", "--out", out]);
    assert_eq!(pass["passed"], true);
    let sph = ok(&["validate-strata", "--scheme", r#"{"kind":"spherical","m_r":5,"m0":3}"#, "--dim", "3", "--out", out]);
    assert_eq!(sph["checks"][3]["name"], "ar-iterations");

    let mut scheme = pass["scheme"].clone();
    scheme["boundaries"][0][0] = serde_json::json!(-0.3);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, scheme.to_string()).unwrap();
    let res = stratflow(&["validate-strata", "--scheme-file", s(&bad), "--dim", "2", "--out", out]);
    assert_eq!(res.status.code(), Some(2));
    let diag: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    let eq = diag["checks"].as_array().unwrap().iter().find(|c| c["name"] == "equiprobability").unwrap();
    assert_eq!(eq["passed"], false);
}
