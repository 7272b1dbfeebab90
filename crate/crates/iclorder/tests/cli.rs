mod common;

use std::fs;
use std::process::{Command, Output};

use common::fixture;

fn iclorder(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iclorder"))
        .args(args)
        .env_remove("ICLORDER_BASE_URL")
        .env_remove("ICLORDER_MODEL")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(name: &str) -> String {
    fixture(name).display().to_string()
}

fn base_run() -> Vec<String> {
    vec![
        "run".into(),
        "--dataset".into(),
        path("separation.jsonl"),
        "--template".into(),
        path("separation.toml"),
        "--corpus".into(),
        path("separation_corpus.txt"),
    ]
}

fn run_with(extra: &[&str]) -> Output {
    let mut args = base_run();
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    iclorder(&refs)
}

#[test]
fn score_prints_the_metric_triple() {
    let o = iclorder(&["score", "--pred", "<<MovieRecommendations>>", "--gold", "<<SearchMovie, MovieRecommendations>>"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "P 100.00 R 50.00 Acc 0.00");

    let o = iclorder(&["score", "--pred", "<<A, B>>", "--gold", "<<A, B>>"]);
    assert_eq!(stdout(&o).trim(), "P 100.00 R 100.00 Acc 100.00");

    let o = iclorder(&["score", "--pred", "<<>>", "--gold", "<<A>>"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with("P 0.00 R 0.00 Acc 0.00"));
    assert!(text.contains("could not be parsed"));
}

#[test]
fn score_with_empty_gold_is_a_config_error() {
    let o = iclorder(&["score", "--pred", "<<A>>", "--gold", "<<>>"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gold"));
}

#[test]
fn perms_lists_plans() {
    let o = iclorder(&["perms", "-n", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let rows: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0], "0\t[0,1,2]");
    assert_eq!(rows[5], "5\t[2,1,0]");

    let o = iclorder(&["perms", "-n", "3", "--anchor", "2,0,1"]);
    let rows: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.split('\t').nth(1).unwrap().starts_with("[2,")));

    let o = iclorder(&["perms", "-n", "7"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cap"));
}

#[test]
fn shots_beyond_cap_exit_two() {
    let o = run_with(&["--shots", "7"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("permutation cap"));
}

#[test]
fn method_all_runs_six_methods() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let o = run_with(&["--method", "all", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let methods: Vec<&str> = report["config"]["methods"].as_array().unwrap().iter().map(|m| m.as_str().unwrap()).collect();
    assert_eq!(methods, ["optiseq", "eoptiseq", "topk", "random", "locale", "influence"]);
    assert_eq!(report["records"].as_array().unwrap().len(), 36);
    assert!(dir.path().join("r.json.txt").exists());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("r.json");
    fs::write(
        &cfg,
        format!(
            "dataset = {:?}\ntemplate = {:?}\ncorpus = {:?}\nseed = 5\nmethod = [\"random\", \"topk\"]\nparallel = 2\n",
            path("separation.jsonl"),
            path("separation.toml"),
            path("separation_corpus.txt")
        ),
    )
    .unwrap();
    let o = iclorder(&["run", "--config", cfg.to_str().unwrap(), "--seed", "9", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["seed"], 9);
    assert_eq!(report["config"]["parallel"], 2);
    assert_eq!(report["config"]["methods"], serde_json::json!(["random", "topk"]));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "api_key = \"oops\"\n").unwrap();
    let o = iclorder(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_flags_exit_two() {
    assert_eq!(iclorder(&["run", "--bogus"]).status.code(), Some(2));
    // the token is read from the environment only
    assert_eq!(run_with(&["--api-key", "secret"]).status.code(), Some(2));
    assert_eq!(run_with(&["--base-url", "http://localhost:1"]).status.code(), Some(2));
    assert_eq!(run_with(&["--backend", "http"]).status.code(), Some(2));
    assert_eq!(run_with(&["--method", "bogus"]).status.code(), Some(2));
    assert_eq!(iclorder(&["run", "--template", "x.toml"]).status.code(), Some(2));
}

#[test]
fn missing_dataset_is_reported() {
    let o = iclorder(&[
        "run",
        "--dataset",
        "/nonexistent/data.jsonl",
        "--template",
        &path("separation.toml"),
        "--corpus",
        &path("separation_corpus.txt"),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/data.jsonl"));
}

#[test]
fn verify_accepts_untouched_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    assert_eq!(run_with(&["--method", "optiseq,random", "--out", out.to_str().unwrap()]).status.code(), Some(0));
    let o = iclorder(&["verify", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("12 records re-derived"));
}

#[test]
fn verify_of_remote_reports_checks_aggregates_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    assert_eq!(run_with(&["--out", out.to_str().unwrap()]).status.code(), Some(0));
    let mut report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    report["config"]["backend"] = serde_json::json!({"kind": "http", "base_url": "http://127.0.0.1:1", "model": "m"});
    fs::write(&out, serde_json::to_string_pretty(&report).unwrap()).unwrap();
    let o = iclorder(&["verify", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("notice"));
}
