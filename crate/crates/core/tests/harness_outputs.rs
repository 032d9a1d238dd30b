use std::fs;

use pgts_core::harness::{
    resolve_config, run_experiment, write_synthetic_log, CommandKind, ExecMode, Overrides, RawConfig, REPLAY_HEADER,
    SIMULATE_HEADER,
};

fn small(command: CommandKind, preset: &str, out: &std::path::Path) -> Overrides {
    Overrides {
        preset: Some(preset.into()),
        runs: Some(3),
        rounds: Some(if command == CommandKind::Replay { 300 } else { 40 }),
        seed: Some(5),
        out: Some(out.to_path_buf()),
        ..Overrides::default()
    }
}

#[test]
fn simulate_writes_runs_aggregate_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let mut flags = small(CommandKind::Simulate, "gaussian-sim", dir.path());
    flags.policy = Some("laplace-ts".into());
    let config = resolve_config(CommandKind::Simulate, RawConfig::default(), &flags).unwrap();
    let summary = run_experiment(&config, ExecMode::Parallel).unwrap();
    assert_eq!(summary.run_files.len(), 3);
    for f in &summary.run_files {
        let text = fs::read_to_string(f).unwrap();
        assert_eq!(text.lines().next(), Some(SIMULATE_HEADER));
        assert_eq!(text.lines().count(), 41);
    }
    let agg = fs::read_to_string(&summary.aggregate_file).unwrap();
    assert_eq!(agg.lines().next(), Some("t,mean_cum_regret,std_cum_regret,runs"));
    let means: Vec<f64> = agg.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(means.len(), 40);
    assert!(means.windows(2).all(|w| w[1] >= w[0]), "mean cumulative regret must not decrease");

    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(&summary.metadata_file).unwrap()).unwrap();
    assert_eq!(meta["completed_runs"].as_array().unwrap().len(), 3);
    assert!(meta["failed_runs"].as_array().unwrap().is_empty());
    let defaulted: Vec<&str> = meta["defaulted"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(defaulted.contains(&"policy.lambda"));
    assert!(defaulted.contains(&"env"));
    assert!(meta["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(meta["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn replay_from_a_log_file() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    write_synthetic_log(&log, 4, 3, 2000, 9).unwrap();
    let mut flags = small(CommandKind::Replay, "replay-synthetic", &dir.path().join("out"));
    flags.log = Some(log);
    flags.policy = Some("glm-ucb".into());
    let config = resolve_config(CommandKind::Replay, RawConfig::default(), &flags).unwrap();
    let summary = run_experiment(&config, ExecMode::Sequential).unwrap();
    let text = fs::read_to_string(&summary.run_files[0]).unwrap();
    assert_eq!(text.lines().next(), Some(REPLAY_HEADER));
    // about 500 of the 2000 events are valid; the budget stops at 300
    assert_eq!(text.lines().count() - 1, 300);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(&summary.metadata_file).unwrap()).unwrap();
    assert!(meta["notes"].as_array().unwrap().iter().any(|n| n.as_str().unwrap().contains("glm-ucb")));
    assert!(meta["aggregated_length"].as_u64().unwrap() <= 300);
}

#[test]
fn disjoint_replay_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(
        &cfg_path,
        r#"{"command": "replay", "policy": {"name": "laplace-ts", "lambda": 2.0},
            "env": {"kind": "log", "arms": 3, "dim": 2, "events": 900, "disjoint": true, "update_batch": 10},
            "runs": 2, "rounds": 900, "seed": 4}"#,
    )
    .unwrap();
    let raw = RawConfig::from_file(&cfg_path).unwrap();
    let flags = Overrides {
        out: Some(dir.path().join("out")),
        ..Overrides::default()
    };
    let config = resolve_config(CommandKind::Replay, raw, &flags).unwrap();
    assert!(!config.defaulted.iter().any(|k| k == "policy.lambda" || k == "env.disjoint"));
    assert!(config.defaulted.iter().any(|k| k == "env.path"));
    let summary = run_experiment(&config, ExecMode::Parallel).unwrap();
    assert_eq!(summary.run_files.len(), 2);
    assert!(summary.aggregate.iter().all(|(m, _)| (0.0..=1.0).contains(m)));
}

#[test]
fn invalid_config_fails_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let mut flags = small(CommandKind::Simulate, "gaussian-sim", &out);
    flags.rounds = Some(0);
    assert!(resolve_config(CommandKind::Simulate, RawConfig::default(), &flags).is_err());
    assert!(!out.exists());
}
