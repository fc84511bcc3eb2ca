//! End-to-end checks of the command-line surface: happy paths, failure
//! modes that must not leave files behind, and report idempotence.

use std::path::Path;
use std::process::{Command, Output};

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stagger-lab"))
}

fn run(args: &[&str]) -> Output {
    cli().args(args).output().expect("binary runs")
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.json");
    std::fs::write(
        &path,
        r#"{
            "env": {"horizon_H": 20, "block_length_L": 5, "num_actions_Ac": 4,
                    "progression_prob_p": 1.0},
            "ppo": {"num_envs_N": 8, "rollout_K": 5, "total_updates": 4,
                    "epochs": 2, "num_minibatches": 2},
            "net": {"embed_dim": 8, "hidden_dim": 16, "hidden_layers": 2}
        }"#,
    )
    .expect("config written");
    path.display().to_string()
}

#[test]
fn train_writes_the_run_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let out = dir.path().join("run");
    let output = run(&[
        "train", "--config", &config, "--seed", "7", "--mode", "staggered",
        "--out", out.to_str().unwrap(), "--save-params",
    ]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    for name in ["metrics.csv", "occupancy.csv", "forgetting.csv", "resets.csv", "config.json", "params.bin"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    let echo = std::fs::read_to_string(out.join("config.json")).unwrap();
    assert!(echo.contains("\"seed\": 7"));
    assert!(echo.contains("\"mode\": \"staggered\""));
}

#[test]
fn malformed_config_exits_nonzero_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("not json at all", "bad-syntax"),
        (r#"{"env": {"horizon_H": 21}}"#, "horizon-not-divisible"),
        (r#"{"env": {"progression_prob_p": 1.5}}"#, "probability-out-of-range"),
        (r#"{"unknown_section": {}}"#, "unknown-key"),
        (r#"{"ppo": {"num_envs_N": 0}}"#, "zero-envs"),
        (r#"{"schedule": {"mode": "naive", "num_groups_NB": 7}}"#, "groups-under-naive"),
    ];
    for (index, (text, label)) in cases.iter().enumerate() {
        let config = dir.path().join(format!("bad{index}.json"));
        std::fs::write(&config, text).unwrap();
        let out = dir.path().join(format!("out{index}"));
        let output = run(&["train", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(!output.status.success(), "{label}: expected failure");
        assert!(!output.stderr.is_empty(), "{label}: expected an error message");
        assert!(!out.exists(), "{label}: output directory was created");
    }
}

#[test]
fn missing_config_file_and_unknown_flags_fail() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let output = run(&["train", "--config", "/nonexistent/cfg.json", "--out", out.to_str().unwrap()]);
    assert!(!output.status.success());
    assert!(!out.exists());

    let output = run(&["train", "--frobnicate"]);
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("--frobnicate"));

    let output = run(&["sweep", "--kind", "sideways"]);
    assert!(!output.status.success());
}

#[test]
fn sweep_then_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("base.json");
    std::fs::write(
        &config,
        r#"{
            "env": {"num_actions_Ac": 4},
            "ppo": {"num_envs_N": 4, "rollout_K": 5, "total_updates": 2,
                    "epochs": 1, "num_minibatches": 2},
            "net": {"embed_dim": 4, "hidden_dim": 8, "hidden_layers": 1}
        }"#,
    )
    .unwrap();
    let out = dir.path().join("sweep");
    let output = run(&[
        "sweep", "--kind", "horizon", "--config", config.to_str().unwrap(),
        "--seeds", "2", "--threads", "2", "--out", out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    assert!(out.join("summary.csv").exists());
    assert!(out.join("config.json").exists());
    assert!(!out.join("failures.csv").exists());

    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    // 6 horizons x 2 modes x 2 seeds, plus the header.
    assert_eq!(summary.lines().count(), 25);

    let first = std::fs::read(out.join("aggregate.csv")).unwrap();
    assert!(run(&["report", "--out", out.to_str().unwrap()]).status.success());
    let second = std::fs::read(out.join("aggregate.csv")).unwrap();
    assert_eq!(first, second, "report changed a freshly aggregated sweep");

    // Corrupt the aggregate; report must rebuild it from summary.csv.
    std::fs::write(out.join("aggregate.csv"), "garbage").unwrap();
    assert!(run(&["report", "--out", out.to_str().unwrap()]).status.success());
    let third = std::fs::read(out.join("aggregate.csv")).unwrap();
    assert_eq!(first, third);

    let missing = dir.path().join("nope");
    assert!(!run(&["report", "--out", missing.to_str().unwrap()]).status.success());
}
