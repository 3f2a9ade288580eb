//! End-to-end tests of the `neuromod` binary: exit codes, determinism,
//! seed precedence, and output schemas.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_neuromod"))
}

/// Small config so each invocation stays fast.
fn tiny_config(dir: &Path, seed: u64) -> std::path::PathBuf {
    let path = dir.join("config.json");
    let cfg = serde_json::json!({
        "seed": seed,
        "d_in": 24,
        "d_out": 16,
        "r": 8,
        "k": 2,
        "d_h": 8,
        "epochs": 2,
        "dataset": {
            "clusters": 3,
            "n_train_per_cluster": 16,
            "n_eval_per_cluster": 4
        }
    });
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn run_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn train_writes_outputs_and_metrics_parse() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path(), 7);
    let out_dir = dir.path().join("run");
    let out = bin()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    run_ok(&out);
    assert!(out_dir.join("checkpoint.json").exists());
    let metrics = std::fs::read_to_string(out_dir.join("metrics.jsonl")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 2, "one record per epoch");
    for line in lines {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["epoch", "task_loss", "orth_loss", "total_loss", "eval_score", "utilization", "lr_b"] {
            assert!(v.get(key).is_some(), "metrics record lacks {key}");
        }
    }
}

#[test]
fn rerun_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path(), 9);
    for name in ["a", "b"] {
        let out = bin()
            .args(["train", "--quiet", "--config"])
            .arg(&config)
            .arg("--out-dir")
            .arg(dir.path().join(name))
            .output()
            .unwrap();
        run_ok(&out);
        assert!(out.stdout.is_empty(), "--quiet still printed output");
    }
    for file in ["checkpoint.json", "metrics.jsonl"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(file)).unwrap(),
            std::fs::read(dir.path().join("b").join(file)).unwrap(),
            "{file} differs"
        );
    }
}

#[test]
fn seed_flag_overrides_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path(), 7);

    // Env fallback beats the config file.
    let out = bin()
        .args(["train", "--quiet", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(dir.path().join("env"))
        .env("NEUROMOD_SEED", "21")
        .output()
        .unwrap();
    run_ok(&out);
    // The flag beats the env var.
    let out = bin()
        .args(["train", "--quiet", "--seed", "22", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(dir.path().join("flag"))
        .env("NEUROMOD_SEED", "21")
        .output()
        .unwrap();
    run_ok(&out);

    let seed_of = |name: &str| {
        let text =
            std::fs::read_to_string(dir.path().join(name).join("config.json")).unwrap();
        serde_json::from_str::<serde_json::Value>(&text).unwrap()["seed"]
            .as_u64()
            .unwrap()
    };
    assert_eq!(seed_of("env"), 21);
    assert_eq!(seed_of("flag"), 22);
}

#[test]
fn usage_errors_exit_2() {
    // Unknown subcommand (clap).
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Invalid config value (k > r).
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"r": 4, "k": 8}"#).unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&path)
        .arg("--out-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "invalid config should exit 2");

    // Unknown config key.
    std::fs::write(&path, r#"{"seed": 1, "bogus": 3}"#).unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&path)
        .arg("--out-dir")
        .arg(dir.path().join("out2"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "unknown key should exit 2");

    // Unknown sweep name.
    let config = tiny_config(dir.path(), 7);
    let out = bin()
        .args(["ablate", "--sweep", "nope", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "unknown sweep should exit 2");
}

#[test]
fn runtime_errors_exit_1() {
    let out = bin()
        .args(["eval", "/nonexistent/checkpoint.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn merge_self_recovers_scores_and_incompatible_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path(), 7);
    let out_dir = dir.path().join("run");
    run_ok(
        &bin()
            .args(["train", "--quiet", "--config"])
            .arg(&config)
            .arg("--out-dir")
            .arg(&out_dir)
            .output()
            .unwrap(),
    );
    let ckpt = out_dir.join("checkpoint.json");

    // Merging a checkpoint with itself at scaling 0.5 (two copies of the
    // same delta) must reproduce the original scores.
    let out = bin()
        .arg("merge")
        .arg(&ckpt)
        .arg(&ckpt)
        .args(["--method", "task_arithmetic", "--scaling", "0.5", "--out-dir"])
        .arg(dir.path().join("merged"))
        .output()
        .unwrap();
    run_ok(&out);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("merged/merge_report.json")).unwrap())
            .unwrap();
    for task in report["per_task"].as_array().unwrap() {
        let ind = task["individual_score"].as_f64().unwrap();
        let merged = task["merged_score"].as_f64().unwrap();
        assert!((ind - merged).abs() < 1e-9, "self-merge drifted: {task}");
        assert!(task.get("degradation_pct").is_some());
    }

    // A checkpoint trained with a different seed has a different frozen
    // projection; merging must be rejected as a usage error.
    let other_cfg = tiny_config(dir.path(), 8);
    let other_dir = dir.path().join("other");
    run_ok(
        &bin()
            .args(["train", "--quiet", "--config"])
            .arg(&other_cfg)
            .arg("--out-dir")
            .arg(&other_dir)
            .output()
            .unwrap(),
    );
    let out = bin()
        .arg("merge")
        .arg(&ckpt)
        .arg(other_dir.join("checkpoint.json"))
        .arg("--out-dir")
        .arg(dir.path().join("merged2"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "incompatible merge should exit 2");
}

#[test]
fn continual_and_ablate_reports() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    let cfg = serde_json::json!({
        "seed": 7,
        "d_in": 36,
        "d_out": 16,
        "r": 16,
        "k": 2,
        "d_h": 8,
        "epochs": 2,
        "num_tasks": 3,
        "dataset": {"clusters": 3, "n_train_per_cluster": 16, "n_eval_per_cluster": 4}
    });
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();

    let out = bin()
        .args(["continual", "--config"])
        .arg(&path)
        .arg("--out-dir")
        .arg(dir.path().join("cont"))
        .output()
        .unwrap();
    run_ok(&out);
    let report: serde_json::Value = serde_json::from_slice(
        &std::fs::read(dir.path().join("cont/continual_report.json")).unwrap(),
    )
    .unwrap();
    assert!(report["bwt"].is_number());
    assert_eq!(report["matrix"]["tasks"], 3);

    let out = bin()
        .args(["ablate", "--sweep", "k", "--seeds", "1", "--config"])
        .arg(&path)
        .arg("--out-dir")
        .arg(dir.path().join("abl"))
        .output()
        .unwrap();
    run_ok(&out);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("abl/ablate_report.json")).unwrap())
            .unwrap();
    let labels: Vec<&str> = report["cells"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["label"].as_str().unwrap())
        .collect();
    assert_eq!(labels, vec!["k=4", "k=8", "k=12", "k=16"]);
}

#[test]
fn eval_and_inspect_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path(), 7);
    let out_dir = dir.path().join("run");
    run_ok(
        &bin()
            .args(["train", "--quiet", "--config"])
            .arg(&config)
            .arg("--out-dir")
            .arg(&out_dir)
            .output()
            .unwrap(),
    );
    let ckpt = out_dir.join("checkpoint.json");

    let out = bin().arg("eval").arg(&ckpt).output().unwrap();
    run_ok(&out);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["eval_score"].is_number());

    let out = bin().arg("inspect").arg(&ckpt).output().unwrap();
    run_ok(&out);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["variant"], "neurolora");
    assert_eq!(v["r"], 8);
    assert!(v["projection_hash"].is_string());
}
