use std::path::Path;
use std::process::{Command, Output};

use ascpo_core::config::ExperimentConfig;

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ascpo-lab"))
        .args(args)
        .env_remove("ASCPO_LAB_THREADS")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn small_config(dir: &Path, epochs: usize) -> String {
    let text = serde_json::json!({
        "env": { "max_episode_steps": 40 },
        "train": {
            "epochs": epochs,
            "steps_per_epoch": 240,
            "policy_hidden": [8],
            "value_hidden": [8],
            "value_iters": 5,
            "eval_episodes": 3,
            "checkpoint_every": 1
        },
        "hyper": { "w": 0.05 },
        "compare": { "algorithms": ["ascpo", "trpo"], "seeds": [4, 5] }
    });
    let path = dir.join(format!("cfg{epochs}.json"));
    std::fs::write(&path, text.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn csv_rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn print_defaults_round_trips() {
    let out = lab(&["--print-defaults"]);
    assert_eq!(code(&out), 0);
    let cfg = ExperimentConfig::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
}

#[test]
fn help_and_bad_flags() {
    assert_eq!(code(&lab(&["--help"])), 0);
    assert_eq!(code(&lab(&["train", "--no-such-flag"])), 1);
    assert_eq!(code(&lab(&[])), 1);
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad_alg = dir.path().join("alg.json");
    std::fs::write(&bad_alg, r#"{"train": {"algorithm": "ppo-magic"}}"#).unwrap();
    let out = lab(&["--config", bad_alg.to_str().unwrap(), "train"]);
    assert_eq!(code(&out), 1);

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{ not json").unwrap();
    assert_eq!(code(&lab(&["--config", broken.to_str().unwrap(), "train"])), 1);

    let unknown = dir.path().join("unknown.json");
    std::fs::write(&unknown, r#"{"train": {"epochz": 3}}"#).unwrap();
    assert_eq!(code(&lab(&["--config", unknown.to_str().unwrap(), "train"])), 1);

    assert_eq!(code(&lab(&["--workers", "0", "verify", "--suite", "mmdp"])), 1);
}

#[test]
fn verify_single_suite() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = lab(&["--out", out_dir, "verify", "--suite", "mmdp"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("oracle_report.json")).unwrap())
            .unwrap();
    assert!(report["results"].as_array().is_some_and(|r| !r.is_empty()));

    assert_eq!(code(&lab(&["--out", out_dir, "verify", "--suite", "nope"])), 1);
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 2);
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    let out = lab(&["--config", &cfg, "--out", run_s, "--seed", "3", "train"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(csv_rows(&run.join("iters.csv")), 2);
    assert_eq!(csv_rows(&run.join("timing.csv")), 2);
    assert_eq!(csv_rows(&run.join("eval.csv")), 3);
    assert!(run.join("checkpoints").join("latest.json").exists());

    let out = lab(&["--config", &cfg, "--out", run_s, "eval"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    // Two compare seeds, eval_episodes each.
    assert_eq!(csv_rows(&run.join("dist.csv")), 6);
}

#[test]
fn eval_without_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(&["--out", dir.path().to_str().unwrap(), "eval"]);
    assert_ne!(code(&out), 0);
}

#[test]
fn identical_runs_write_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 2);
    let logs: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|name| {
            let run = dir.path().join(name);
            let out = lab(&["--config", &cfg, "--out", run.to_str().unwrap(), "--workers", "2", "train"]);
            assert_eq!(code(&out), 0);
            std::fs::read(run.join("iters.csv")).unwrap()
        })
        .collect();
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn resume_continues_the_same_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let straight = dir.path().join("straight");
    let resumed = dir.path().join("resumed");
    let three = small_config(dir.path(), 3);
    let two = small_config(dir.path(), 2);
    assert_eq!(code(&lab(&["--config", &three, "--out", straight.to_str().unwrap(), "train"])), 0);
    assert_eq!(code(&lab(&["--config", &two, "--out", resumed.to_str().unwrap(), "train"])), 0);
    let out = lab(&["--config", &three, "--out", resumed.to_str().unwrap(), "train", "--resume"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read(straight.join("iters.csv")).unwrap(),
        std::fs::read(resumed.join("iters.csv")).unwrap()
    );
}

#[test]
fn compare_writes_psi_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 1);
    let out_dir = dir.path().join("cmp");
    let out = lab(&["--config", &cfg, "--out", out_dir.to_str().unwrap(), "compare"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(csv_rows(&out_dir.join("comparison.csv")), 4);
    assert_eq!(csv_rows(&out_dir.join("psi.csv")), 4);
    assert_eq!(csv_rows(&out_dir.join("failures.csv")), 0);
    let psi = std::fs::read_to_string(out_dir.join("psi.csv")).unwrap();
    let trpo_rows: Vec<&str> = psi.lines().filter(|l| l.starts_with("trpo,")).collect();
    assert_eq!(trpo_rows.len(), 2);
    assert!(trpo_rows.iter().all(|l| l.split(',').nth(2) == Some("1.0000000000000000e0")));
}
