use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn forge(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(["--log-level", "error"])
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn version_prints_crate_version() {
    let dir = tempfile::tempdir().unwrap();
    let out = forge(&["version"], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn fixture_then_stats() {
    let dir = tempfile::tempdir().unwrap();
    assert!(forge(&["fixture", "--out", "fx"], dir.path()).status.success());
    let out = forge(&["stats", "--corpus", "fx/web"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stats = stdout_json(&out);
    assert_eq!(stats["total_docs"], 2000);
    assert_eq!(stats["per_class"]["agent_doc"]["docs"], 2000);
}

#[test]
fn stats_only_pipeline_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    assert!(forge(&["fixture", "--out", "fx"], dir.path()).status.success());
    let config = serde_json::json!({
        "workspace": "ws",
        "rng_seed": 1,
        "stages": ["stats"],
        "stats": {"corpus": "web"}
    });
    fs::write(dir.path().join("fx/stats.json"), config.to_string()).unwrap();
    let out = forge(&["run", "--config", "fx/stats.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fx/ws/run_report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "ok");
    assert_eq!(report["stages"].as_array().unwrap().len(), 1);
    assert!(dir.path().join("fx/ws/stats.json").is_file());
}

#[test]
fn missing_input_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "workspace": "ws",
        "rng_seed": 1,
        "stages": ["stats"],
        "stats": {"corpus": "no/such/corpus"}
    });
    fs::write(dir.path().join("p.json"), config.to_string()).unwrap();
    let out = forge(&["run", "--config", "p.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stats.corpus"), "{err}");
}

#[test]
fn unknown_config_field_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("p.json"), r#"{"workspace": "ws", "rng_seed": 1, "stages": [], "stagez": 1}"#).unwrap();
    let out = forge(&["run", "--config", "p.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stagez"));
}

#[test]
fn override_can_break_a_valid_config() {
    let dir = tempfile::tempdir().unwrap();
    assert!(forge(&["fixture", "--out", "fx"], dir.path()).status.success());
    let out = forge(&["run", "--config", "fx/pipeline.json", "--set", "prune.threshold=1.5"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("prune.threshold"));
}

#[test]
fn fit_then_optimize() {
    let dir = tempfile::tempdir().unwrap();
    let mut obs = String::new();
    for i in 1..=12 {
        let x = i as f64 * 0.05;
        obs += &format!("{{\"x\": {x}, \"loss\": {}, \"benchmark\": \"down\"}}\n", 0.6 + 0.8 * x.powf(-0.5));
        obs += &format!("{{\"x\": {x}, \"loss\": {}, \"benchmark\": \"up\"}}\n", 1.2 + 625.0 / 243.0 * x * x);
    }
    fs::write(dir.path().join("obs.jsonl"), obs).unwrap();
    for b in ["down", "up"] {
        let out = forge(&["fit", "--obs", "obs.jsonl", "--benchmark", b, "--out", &format!("{b}.json")], dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let out = forge(&["optimize", "--fits", "down.json,up.json", "--weights", "1,1"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let opt = stdout_json(&out);
    assert!((opt["x"].as_f64().unwrap() - 0.36).abs() < 1e-4, "{opt}");
}

#[test]
fn bad_arguments_exit_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = forge(&["optimize", "--fits", "a.json", "--domain", "0.6:0.1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stage_failure_exits_one_and_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    assert!(forge(&["fixture", "--out", "fx"], dir.path()).status.success());
    let out = forge(
        &["run", "--config", "fx/pipeline.json", "--set", "stages=[\"fit\"]", "--set", "fit.benchmarks=[\"nope\"]"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fit"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fx/work/run_report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "failed");
    assert_eq!(report["failed_stage"], "fit");
}
