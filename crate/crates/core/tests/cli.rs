//! Exit codes and outputs of the command-line interface.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resembed"))
        .args(args)
        .current_dir(dir)
        .env_remove("RESEMBED_SEED")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_exits_zero_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["--help"][..], &["train", "--help"], &["bound", "--help"]] {
        let out = run(args, dir.path());
        assert_eq!(out.status.code(), Some(0), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    }
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = run(&["frobnicate"], dir.path());
    assert_eq!(unknown.status.code(), Some(2));
    assert!(stderr(&unknown).contains("Usage"));
    assert_eq!(run(&[], dir.path()).status.code(), Some(2));
}

#[test]
fn missing_paths_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let train = run(
        &[
            "train",
            "--train",
            "nope.jsonl",
            "--out-dir",
            "o",
            "--fusion-mode",
            "none",
        ],
        dir.path(),
    );
    assert_eq!(train.status.code(), Some(2));
    assert!(stderr(&train).contains("train"));
    let cfg = run(&["--config", "missing.json", "bound"], dir.path());
    assert_eq!(cfg.status.code(), Some(2));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"lambda": -1}"#).unwrap();
    let out = run(&["--config", "c.json", "bound"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("lambda"), "{}", stderr(&out));

    std::fs::write(dir.path().join("d.json"), "{}").unwrap();
    assert_eq!(
        run(&["--config", "d.json", "bound"], dir.path())
            .status
            .code(),
        Some(0)
    );
}

#[test]
fn bound_prints_a_csv_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["bound"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("param,value,r_star,bound"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 4);
    let r_star: f64 = row[2].parse().unwrap();
    assert!(r_star > 0.0);
    assert!(row[3].parse::<f64>().unwrap() > 0.0);
}

#[test]
fn verify_prop1_on_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "verify-prop1",
            "--islands",
            "3,7,12",
            "--dim",
            "8",
            "--out",
            "r.json",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert!(report["max_deviation"].as_f64().unwrap() < 1e-9);
    assert_eq!(report["islands"].as_array().unwrap().len(), 3);
    assert_eq!(report["pairs"].as_array().unwrap().len(), 3);
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["gradcheck"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.json"),
        r#"{"seed": 5, "n_items": 40, "n_domains": 4, "n_sequences": 4, "n_train": 50, "n_test": 20}"#,
    )
    .unwrap();
    let synth = |out: &str, env: Option<&str>, flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_resembed"));
        cmd.current_dir(dir.path()).env_remove("RESEMBED_SEED");
        if let Some(v) = env {
            cmd.env("RESEMBED_SEED", v);
        }
        cmd.args(["--config", "c.json"]);
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        assert!(cmd
            .args(["synth", "--out-dir", out])
            .status()
            .unwrap()
            .success());
        std::fs::read(dir.path().join(out).join("train.jsonl")).unwrap()
    };
    let config_seed = synth("a", None, None);
    let env_seed = synth("b", Some("9"), None);
    let flag_seed = synth("c", Some("5"), Some("9"));
    assert_ne!(config_seed, env_seed);
    assert_eq!(env_seed, flag_seed);
}

#[test]
fn bad_seed_env_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_resembed"))
        .current_dir(dir.path())
        .env("RESEMBED_SEED", "abc")
        .arg("bound")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("RESEMBED_SEED"));
}
