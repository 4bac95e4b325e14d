use std::process::Command;

fn edgesched(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_edgesched")).args(args).output().unwrap()
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[workload]\nbase_rate = -1.0\n").unwrap();
    let out = dir.path().join("run");
    let output = edgesched(&["train", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("workload.base_rate"));
}

#[test]
fn zero_episode_training_writes_an_empty_curve_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let output = edgesched(&["train", "--episodes", "0", "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let curve = std::fs::read_to_string(out.join("learning_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1);
    assert!(out.join("checkpoints").join("actor.bin").exists());
    assert_eq!(std::fs::read_to_string(out.join("seed.txt")).unwrap().trim(), "3");
    assert!(out.join("config.toml").exists());
}
