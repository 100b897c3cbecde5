//! End-to-end invocations of the binary.

use std::process::Command;

fn fedmef() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fedmef"))
}

#[test]
fn check_passes() {
    let out = fedmef().arg("check").output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}

#[test]
fn run_honours_output_root_and_filters() {
    let dir = tempfile::tempdir().unwrap();
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/quick.toml");
    let out = fedmef()
        .env("FEDMEF_OUTPUT_ROOT", dir.path())
        .args(["run", "--config", config, "--seed", "2", "--variant", "noBaE"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("runs/quick");
    assert!(run.join("noBaE/seed-2/metrics.csv").is_file());
    assert!(!run.join("FedMef").exists());
    assert!(run.join("summary.json").is_file());

    let report = fedmef()
        .env("FEDMEF_OUTPUT_ROOT", dir.path())
        .args(["cost-report", "--config", config])
        .output()
        .unwrap();
    assert!(report.status.success());
    let text = String::from_utf8(report.stdout).unwrap();
    assert!(text.starts_with("model,framework,mask_sparsity"));
}

#[test]
fn invalid_config_fails_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[federation]\nclientz = 3\n").unwrap();
    let out = fedmef().args(["run", "--config"]).arg(&bad).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("clientz"), "{err}");

    let missing = fedmef().args(["run", "--config", "/nonexistent.toml"]).output().unwrap();
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent.toml"));
}
