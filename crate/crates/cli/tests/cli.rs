use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
scenario = "ATTACKED"
max_epochs = 2
master_seed = 3

[env]
trace_len = 1500
dt_len = 600
eval_len = 400

[train]
hidden = [16]

[attacker]
kind = "FGSM"
eps = 0.1
"#;

fn aedsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aedsim")).args(args).output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "tiny.toml", TINY);
    let out_dir = tmp.path().join("out");
    let out = aedsim(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("epoch   2/2"));
    let csv = fs::read_to_string(out_dir.join("kpi.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let log = out_dir.join("log.json");
    let log = log.to_str().unwrap();
    let text = aedsim(&["report", log]);
    assert!(text.status.success());
    assert!(String::from_utf8_lossy(&text.stdout).contains("ATTACKED"));
    let json = aedsim(&["report", log, log, "--format", "json"]);
    assert!(json.status.success());
    let body = String::from_utf8(json.stdout).unwrap();
    assert!(body.trim_start().starts_with('{') && body.contains("\"deltas\""));
}

#[test]
fn seed_override_is_logged() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "tiny.toml", TINY);
    let out_dir = tmp.path().join("seeded");
    let out = aedsim(&[
        "run",
        "--config",
        &cfg,
        "--seed",
        "99",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let log = fs::read_to_string(out_dir.join("log.json")).unwrap();
    assert!(log.contains("\"master_seed\": 99"));
}

#[test]
fn validate_config_prints_a_fixed_point() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "tiny.toml", TINY);
    let first = aedsim(&["validate-config", &cfg]);
    assert!(first.status.success());
    assert!(stderr(&first).contains("ok"));
    let resolved = String::from_utf8(first.stdout).unwrap();
    assert!(
        resolved.contains("target_accuracy"),
        "defaults should be filled in:\n{resolved}"
    );
    let again = write_config(tmp.path(), "resolved.toml", &resolved);
    let second = aedsim(&["validate-config", &again]);
    assert!(second.status.success());
    assert_eq!(String::from_utf8(second.stdout).unwrap(), resolved);
}

#[test]
fn config_errors_exit_with_one_and_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let typo = write_config(tmp.path(), "typo.toml", &TINY.replace("trace_len", "trace_length"));
    let out = aedsim(&["validate-config", &typo]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("trace_length"), "{}", stderr(&out));

    let range = write_config(tmp.path(), "range.toml", &TINY.replace("eps = 0.1", "eps = -0.1"));
    let out = aedsim(&[
        "run",
        "--config",
        &range,
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("eps"), "{}", stderr(&out));
    assert!(!tmp.path().join("x").exists());

    let missing = tmp.path().join("nope.toml");
    let out = aedsim(&["run", "--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_and_runtime_errors() {
    assert_eq!(aedsim(&[]).status.code(), Some(1));
    assert_eq!(aedsim(&["run"]).status.code(), Some(1));
    assert_eq!(aedsim(&["--help"]).status.code(), Some(0));
    assert_eq!(aedsim(&["--version"]).status.code(), Some(0));

    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.json");
    let out = aedsim(&["report", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("missing.json"));

    let garbage = write_config(tmp.path(), "log.json", "[1, 2]");
    let out = aedsim(&["report", &garbage]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("malformed log"));
}
