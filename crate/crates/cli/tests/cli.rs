use std::fs;
use std::process::Command;

fn drtarget() -> Command {
    Command::new(env!("CARGO_BIN_EXE_drtarget"))
}

const CONFIG: &str = r#"
methods = ["OLS", "Ridge"]
[segment]
ks = [3]
percentile_k = 3
[report]
n_bins = 2
[population]
n_users = 4
[population.base]
n_days = 60
"#;

#[test]
fn run_all_then_report_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("out");
    let status = drtarget()
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "5",
            "--jobs",
            "1",
            "--out-dir",
            out.to_str().unwrap(),
        ])
        .arg("run-all")
        .status()
        .unwrap();
    assert!(status.success());
    let est = fs::read_to_string(out.join("effects/estimates.csv")).unwrap();
    assert_eq!(est.lines().count(), 1 + 4 * 2);

    let rejection = fs::read(out.join("report/rejection.csv")).unwrap();
    let status = drtarget()
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
            "report",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(
        fs::read(out.join("report/rejection.csv")).unwrap(),
        rejection
    );
}

#[test]
fn methods_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("out");
    let status = drtarget()
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "--methods",
            "ridge",
            "--out-dir",
            out.to_str().unwrap(),
            "run-all",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let est = fs::read_to_string(out.join("effects/estimates.csv")).unwrap();
    assert!(est
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(1) == Some("Ridge")));
}

#[test]
fn bad_config_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "not_a_key = 1\n").unwrap();
    let output = drtarget()
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "--out-dir",
            dir.path().to_str().unwrap(),
            "report",
        ])
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("config error"));
}

#[test]
fn unknown_method_rejected() {
    let output = drtarget()
        .args(["--methods", "gbm", "prep"])
        .output()
        .unwrap();
    assert!(!output.status.success());
}
