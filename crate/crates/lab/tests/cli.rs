use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_dyweight-lab");

const TINY: &str = r#"
workers = 1

[coeffs]
draws = 20

[synth]
k_values = [5, 10]
s_values = [6, 8]
runs = 2
check_k = 10
check_s = 8
teacher_steps = 40

[train]
iterations = 6
pairs = 8
batch = 8
holdout_pairs = 8
"#;

fn lab(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("tiny.toml");
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn verify_coeffs_check_passes_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let o = lab(&["verify-coeffs", "--config", &cfg, "--check", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS ")).count(), 6);
    for f in ["report.csv", "config.resolved.json", "summary.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let resolved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("config.resolved.json")).unwrap()).unwrap();
    assert_eq!(resolved["command"], "verify-coeffs");
    assert_eq!(resolved["coeffs"]["draws"], 20);
}

#[test]
fn toy_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let o = lab(&["ablate-init", "--config", &cfg, "--svg", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "report.csv",
        "report_mean.csv",
        "loss_curve.csv",
        "params.json",
        "config.resolved.json",
        "loss_curve.svg",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let params: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("params.json")).unwrap()).unwrap();
    assert_eq!(params.as_array().unwrap().len(), 3);
}

#[test]
fn seed_flag_changes_and_repeats_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let o = lab(&["synth-grid", "--config", &cfg, "--seed", seed, "--out", out.to_str().unwrap()]);
        assert!(o.status.code().is_some_and(|c| c <= 1));
        fs::read(out.join("report.csv")).unwrap()
    };
    let a = run("3", "a");
    let b = run("3", "b");
    let c = run("4", "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn failing_check_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    // tolerance no computation can meet
    let cfg = write_config(dir.path(), &TINY.replace("draws = 20", "draws = 20\nclassic_abs_tol = -1.0"));
    let out = dir.path().join("out");
    let o = lab(&["verify-coeffs", "--config", &cfg, "--check", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL "));
    // without --check the same run succeeds
    let o = lab(&["verify-coeffs", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn bad_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lab(&["fly"]).status.code(), Some(2));
    let cfg = write_config(dir.path(), "[train]\nstudent_step = 4\n");
    assert_eq!(lab(&["train-toy", "--config", &cfg]).status.code(), Some(2));
    let cfg = write_config(dir.path(), "command = \"ablate-order\"\n");
    let o = lab(&["ablate-init", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    assert_eq!(lab(&["train-toy", "--config", "/nonexistent/x.toml"]).status.code(), Some(2));
}
