use std::path::Path;
use std::process::Command as Process;

use stalefl_cli::{run_scenario, Command, ExperimentConfig, Preset};

fn stalefl(args: &[&str]) -> std::process::Output {
    Process::new(env!("CARGO_BIN_EXE_stalefl"))
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn solve_writes_stamped_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let status = stalefl(&["solve", "--seed", "7", "--out", out.to_str().unwrap()]);
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    for name in [
        "profiles.csv",
        "bo_trace.csv",
        "mean_field.csv",
        "plans.csv",
        "config.toml",
        "run_record.json",
    ] {
        assert!(out.join(name).exists(), "{name}");
    }
    let text = std::fs::read_to_string(out.join("bo_trace.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("config_hash,seed,sigma,iteration"));
    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run_record.json")).unwrap())
            .unwrap();
    let hash = record["config_hash"].as_str().unwrap();
    assert!(lines.all(|l| l.starts_with(&format!("{hash},7,"))));

    // The embedded config reproduces the run.
    let again = dir.path().join("again");
    let status = stalefl(&[
        "solve",
        "--config",
        out.join("config.toml").to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert!(status.status.success());
    for name in ["bo_trace.csv", "plans.csv"] {
        assert_eq!(
            std::fs::read(out.join(name)).unwrap(),
            std::fs::read(again.join(name)).unwrap()
        );
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "[server]\ntradeof = 0.5\n");
    let out = stalefl(&["solve", "--config", &bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let invalid = write(
        dir.path(),
        "invalid.toml",
        "[population]\nnum_clients = 0\n",
    );
    assert_eq!(
        stalefl(&["solve", "--config", &invalid]).status.code(),
        Some(2)
    );

    let starved = write(
        dir.path(),
        "starved.toml",
        "[fixed_point]\nmax_iterations = 1\n",
    );
    let out_dir = dir.path().join("starved");
    let out = stalefl(&[
        "solve",
        "--config",
        &starved,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(out_dir.join("plans.csv").exists());
    assert!(out_dir.join("run_record.json").exists());
}

#[test]
fn payment_only_scenario_matches_no_update() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::preset(Preset::Desk);
    config.server.tradeoff = 1.0;
    config.baselines.random_trials = 5;
    config.baselines.theta_offsets = vec![];
    config.baselines.payment_factors = vec![];
    config.output_dir = dir.path().to_path_buf();
    let record = run_scenario(Command::Baselines, config).unwrap();
    let eq = record.equilibrium.unwrap();
    assert_eq!(eq.payment, 0.0);
    let acc = |label: &str| {
        record
            .training
            .iter()
            .find(|t| t.label == label)
            .unwrap()
            .accuracy
    };
    assert_eq!(acc("optimal"), acc("no_update"));
}
