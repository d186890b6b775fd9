use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn caql(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_caql"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn metrics(dir: &Path) -> Vec<Value> {
    std::fs::read_to_string(dir.join("metrics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

const SHORT: [&str; 10] = [
    "--steps",
    "60",
    "--set",
    "eval_interval=20",
    "--set",
    "episode_len=40",
    "--set",
    "eval_episodes=2",
    "--set",
    "batch_size=16",
];

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = caql(&["train", "--learning-rate", "3"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_suite_is_a_usage_error() {
    let out = caql(&["verify", "--suite", "everything"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("grad"));
}

#[test]
fn unknown_config_key_fails() {
    let out = caql(&["train", "--set", "warp=9", "--steps", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warp"));
}

#[test]
fn verify_grad_and_bounds_pass() {
    let out = caql(&["verify", "--suite", "grad", "--suite", "bounds"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.contains("PASS gradient-check"));
    assert!(stdout.contains("PASS bounds-containment"));
}

#[test]
fn train_writes_metrics_and_reruns_identically_from_the_echo() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run");
    let mut args = vec![
        "train",
        "--env",
        "pendulum",
        "--action-range",
        "2",
        "--optimizer",
        "ga",
        "--loss",
        "l2",
        "--seed",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
    ];
    args.extend(SHORT);
    let out = caql(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let seed_dir = out_dir.join("seed1");
    let recs = metrics(&seed_dir);
    assert_eq!(recs.len(), 4);
    let steps: Vec<u64> = recs.iter().map(|r| r["step"].as_u64().unwrap()).collect();
    assert!(steps.windows(2).all(|w| w[0] < w[1]), "{steps:?}");
    assert!(recs.iter().all(|r| r["solver"] == "ga" && r["seed"] == 1));
    assert!(seed_dir.join("q_final.ckpt").exists());
    assert!(seed_dir.join("policy_final.ckpt").exists());

    // rerun from the echoed config into a fresh directory
    let echoed = seed_dir.join("config.txt");
    let rerun_dir = tmp.path().join("rerun");
    let out = caql(&[
        "train",
        "--config",
        echoed.to_str().unwrap(),
        "--out",
        rerun_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let strip_timing = |mut v: Vec<Value>| {
        for r in &mut v {
            let obj = r.as_object_mut().unwrap();
            obj.retain(|k, _| !k.starts_with("maxq_elapsed"));
        }
        v
    };
    assert_eq!(
        strip_timing(metrics(&seed_dir)),
        strip_timing(metrics(&rerun_dir.join("seed1")))
    );
    let q_a = std::fs::read(seed_dir.join("q_final.ckpt")).unwrap();
    let q_b = std::fs::read(rerun_dir.join("seed1").join("q_final.ckpt")).unwrap();
    assert!(q_a == q_b, "final checkpoints differ");

    // the saved action function evaluates
    let out = caql(&[
        "eval",
        "--policy",
        seed_dir.join("policy_final.ckpt").to_str().unwrap(),
        "--episodes",
        "3",
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("3 episodes"));
}

#[test]
fn dual_optimizer_records_no_exact_solves() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--optimizer", "dual", "--out", tmp.path().to_str().unwrap()];
    args.extend(SHORT);
    let out = caql(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let recs = metrics(&tmp.path().join("seed0"));
    assert!(recs.iter().all(|r| r["solver"] == "dual" && r["exact_solves"] == 0));
}

#[test]
fn bench_reports_all_solvers_with_mip_dominance() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--out", tmp.path().to_str().unwrap()];
    args.extend(SHORT);
    assert!(caql(&args).status.success());
    let seed_dir = tmp.path().join("seed0");
    let out = caql(&[
        "bench-maxq",
        "--checkpoint",
        seed_dir.join("q_final.ckpt").to_str().unwrap(),
        "--policy",
        seed_dir.join("policy_final.ckpt").to_str().unwrap(),
        "--samples",
        "20",
        "--json",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let rows = report["rows"].as_array().unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r["solver"].as_str().unwrap()).collect();
    assert_eq!(names, ["mip", "ga", "cem"]);
    for r in rows {
        assert_eq!(r["dominance_violations"], 0);
        assert!(r["median_ms"].as_f64().unwrap() >= 0.0);
        if r["solver"] != "mip" {
            // approximate solvers never beat MIP by more than its gap
            assert!(r["min_gap"].as_f64().unwrap() >= -1e-4 - 1e-6);
        }
    }
}
