use std::path::Path;
use std::process::{Command, Output};

use sdr_core::load_dataset;

fn sdr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdr")).args(args).output().expect("binary runs")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn simulate_estimate_bench_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = path(dir.path(), "s.json");
    std::fs::write(&scenario, r#"{"n": 150, "p": 20, "s_theta": 2, "s_beta": 2}"#).unwrap();
    let data = path(dir.path(), "d.csv");
    let truth = path(dir.path(), "t.json");
    let out = sdr(&["simulate", "--scenario", &scenario, "--seed", "4", "--out", &data, "--truth", &truth]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let loaded = load_dataset(Path::new(&data), true).unwrap();
    assert_eq!((loaded.n(), loaded.p()), (150, 20));
    let t: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&truth).unwrap()).unwrap();
    assert_eq!(t["tau_true"], 0.0);

    for method in ["sdr", "aipw", "arb"] {
        let result = path(dir.path(), &format!("{method}.json"));
        let out = sdr(&["estimate", "--data", &data, "--method", method, "--out", &result, "--add-intercept"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&result).unwrap()).unwrap();
        assert_eq!(r["method"], method);
        let (lo, tau, hi) = (r["ci_lower"].as_f64().unwrap(), r["tau_hat"].as_f64().unwrap(), r["ci_upper"].as_f64().unwrap());
        assert!(lo < tau && tau < hi);
    }

    let plan = path(dir.path(), "plan.json");
    std::fs::write(
        &plan,
        r#"{"scenarios": [{"name": "tiny", "n": 100, "p": 10, "s_theta": 2, "s_beta": 2}], "methods": ["sdr", "arb"]}"#,
    )
    .unwrap();
    let results = path(dir.path(), "results.json");
    let table = path(dir.path(), "table.csv");
    let out = sdr(&["bench", "--plan", &plan, "--out", &results, "--table", &table, "--reps", "3", "--seed", "1", "--workers", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&results).unwrap()).unwrap();
    assert_eq!(r["reps"], 3);
    assert_eq!(r["master_seed"], 1);
    assert_eq!(r["scenarios"][0]["methods"][0]["rep_records"].as_array().unwrap().len(), 3);
    let csv = std::fs::read_to_string(&table).unwrap();
    assert!(csv.starts_with("method,tiny_mse,tiny_cp\nsdr,"), "{csv}");
}

#[test]
fn estimate_writes_json_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = path(dir.path(), "s.json");
    std::fs::write(&scenario, r#"{"n": 80, "p": 5, "s_theta": 2, "s_beta": 2}"#).unwrap();
    let data = path(dir.path(), "d.csv");
    assert!(sdr(&["simulate", "--scenario", &scenario, "--out", &data]).status.success());
    let config = path(dir.path(), "cfg.json");
    std::fs::write(&config, r#"{"level": 0.9, "solver": {"c_beta": 0.8}}"#).unwrap();
    let out = sdr(&["estimate", "--data", &data, "--config", &config]);
    assert!(out.status.success());
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["level"], 0.9);
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = path(dir.path(), "s.json");
    std::fs::write(&scenario, r#"{"n": 80, "p": 5, "s_theta": 2, "sbeta": 2}"#).unwrap();
    let out = sdr(&["simulate", "--scenario", &scenario, "--out", &path(dir.path(), "d.csv")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/sbeta"));

    let plan = path(dir.path(), "plan.json");
    std::fs::write(&plan, r#"{"scenarios": [{"name": "a", "n": 50, "p": 5, "s_theta": 1, "s_beta": 1}], "methods": ["sdr"], "reps": 0}"#).unwrap();
    let out = sdr(&["bench", "--plan", &plan, "--out", &path(dir.path(), "r.json")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("reps must be ≥ 1"));

    let data = path(dir.path(), "bad.csv");
    std::fs::write(&data, "y,w,x1\n1.0,2,0.5\n").unwrap();
    assert_eq!(sdr(&["estimate", "--data", &data]).status.code(), Some(1));
    assert_eq!(sdr(&["estimate", "--data", &path(dir.path(), "missing.csv")]).status.code(), Some(1));
    assert_eq!(sdr(&["estimate", "--method", "ols", "--data", &data]).status.code(), Some(1));
    assert_eq!(sdr(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn estimator_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "d.csv");
    let mut text = String::from("y,w,x1\n");
    for i in 0..8 {
        text.push_str(&format!("{}.0,{},{}\n", i, u8::from(i == 0), i as f64 * 0.3));
    }
    std::fs::write(&data, text).unwrap();
    let out = sdr(&["estimate", "--data", &data]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
