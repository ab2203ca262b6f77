use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_adaptive-decoding"))
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn config_json(name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(config_path(name)).unwrap()).unwrap()
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["train"])), 1);
    assert_eq!(code(&run(&["frobnicate", "--config", "x.json"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    let missing = run(&["train", "--config", "/nonexistent/config.json", "--out", "/tmp/x"]);
    assert_eq!(code(&missing), 1);
}

#[test]
fn invalid_adapter_kind_fails_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config_json("smoke.json");
    cfg["adapter"]["kind"] = json!("beam");
    let path = write_config(dir.path(), "bad.json", &cfg);
    let out_dir = dir.path().join("out");
    let out = run(&["train", "--config", s(&path), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    assert!(!out_dir.exists());

    // a token adapter needs a token-level environment
    let mut cfg = config_json("smoke.json");
    cfg["adapter"]["kind"] = json!("tok");
    let path = write_config(dir.path(), "mismatch.json", &cfg);
    assert_eq!(code(&run(&["train", "--config", s(&path), "--out", s(&out_dir)])), 1);
    assert!(!out_dir.exists());
}

#[test]
fn zero_workers_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--config",
        s(&config_path("smoke.json")),
        "--out",
        s(dir.path()),
        "--workers",
        "0",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn smoke_train_resume_and_eval() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_path("smoke.json");
    let full = dir.path().join("full");
    let out = run(&["train", "--config", s(&cfg), "--out", s(&full), "--workers", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["checkpoint.bin", "checkpoint.bin.json", "trace.csv", "checkpoint_step100.bin"] {
        assert!(full.join(f).exists(), "missing {f}");
    }
    let trace = std::fs::read_to_string(full.join("trace.csv")).unwrap();
    assert!(trace.starts_with("# seed: 7\n# config: "));
    assert_eq!(trace.lines().filter(|l| !l.starts_with('#')).count(), 201);

    // resuming from the intermediate checkpoint reproduces the full run
    let resumed = dir.path().join("resumed");
    let out = run(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&resumed),
        "--checkpoint",
        s(&full.join("checkpoint_step100.bin")),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["checkpoint.bin", "trace.csv"] {
        assert_eq!(
            std::fs::read(full.join(f)).unwrap(),
            std::fs::read(resumed.join(f)).unwrap(),
            "{f} differs after resume"
        );
    }

    // resuming under a different seed is refused
    let other = dir.path().join("other");
    let out = run(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&other),
        "--seed",
        "8",
        "--checkpoint",
        s(&full.join("checkpoint_step100.bin")),
    ]);
    assert_eq!(code(&out), 1);

    let eval = dir.path().join("eval");
    let out = run(&[
        "eval",
        "--config",
        s(&cfg),
        "--out",
        s(&eval),
        "--checkpoint",
        s(&full.join("checkpoint.bin")),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["provenance"]["seed"], json!(7));
    assert_eq!(report["missing"], json!(["adapter_no_budget"]));
    assert!(std::fs::read_to_string(eval.join("report.csv"))
        .unwrap()
        .starts_with("# seed: 7"));
    assert!(start.elapsed().as_secs() < 60, "smoke took {:?}", start.elapsed());
}

#[test]
fn eval_rejects_incompatible_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut tok = config_json("forking_chain.json");
    tok["train"]["steps"] = json!(5);
    tok["train"]["eval_interval"] = json!(0);
    let tok_path = write_config(dir.path(), "tok.json", &tok);
    let tok_out = dir.path().join("tok");
    assert_eq!(code(&run(&["train", "--config", s(&tok_path), "--out", s(&tok_out)])), 0);

    let out = run(&[
        "eval",
        "--config",
        s(&config_path("smoke.json")),
        "--out",
        s(&dir.path().join("eval")),
        "--checkpoint",
        s(&tok_out.join("checkpoint.bin")),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn collapsing_prompt_filter_reports_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config_json("smoke.json");
    cfg["train"]["prompt_filter"] = json!({"min": 0.99, "max": 1.0, "window": 1});
    cfg["train"]["train_instances"] = json!(4);
    cfg["train"]["eval_interval"] = json!(0);
    let path = write_config(dir.path(), "filter.json", &cfg);
    let out = run(&["train", "--config", s(&path), "--out", s(&dir.path().join("out"))]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn single_seed_sweep_reports_na_interval() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config_json("sweep.json");
    cfg["sweep"] = json!({"seeds": [3], "budgets": [1, 8]});
    cfg["train"]["steps"] = json!(30);
    cfg["eval"]["instances"] = json!(20);
    let path = write_config(dir.path(), "sweep.json", &cfg);
    let out_dir = dir.path().join("out");
    let out = run(&["sweep", "--config", s(&path), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 2 * 4);
    assert!(rows.iter().all(|r| r.ends_with(",NA") && r.contains(",1,")));
    assert!(out_dir.join("seed_3/adapter_budget/checkpoint.bin").exists());
    assert!(out_dir.join("seed_3/report.json").exists());
}

#[test]
fn select_actions_writes_action_set() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sel");
    let out = run(&[
        "select-actions",
        "--config",
        s(&config_path("select_actions.json")),
        "--out",
        s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let set: Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("action_set.json")).unwrap())
            .unwrap();
    assert_eq!(set["pool_size"], json!(180));
    let trace = set["greedy"]["coverage_trace"].as_array().unwrap();
    assert_eq!(trace.len(), 6);
    assert!(trace.windows(2).all(|w| w[1].as_f64() >= w[0].as_f64()));
    assert!(out_dir.join("reward_matrix.csv").exists());
}
