//! Drives the `followrl` binary end to end on small budgets.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_followrl")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn err(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn leader_profile_csv() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen-leader", "--seed", "2", "--duration-s", "10", "--out", "l.csv"]);
    let text = fs::read_to_string(d.path().join("l.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t_s,v_mps"));
    assert_eq!(lines.next(), Some("0,0"));
    assert_eq!(text.lines().count(), 101);
}

#[test]
fn reward_probe_prints_breakdown() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(d.path(), &["reward-probe", "--v", "10", "--vl", "10", "--g", "17", "--jerk", "0"]);
    let b: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!((b["total"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(b["g_opt"].as_f64().unwrap(), 17.0);
    assert!(ok(d.path(), &["reward-probe", "--v", "3", "--vl", "1", "--g", "-0.5"]).contains("collision"));
}

#[test]
fn config_overrides_reach_the_commands() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("c.toml"), "[reward]\nt_gap = 2.0\n").unwrap();
    let out = ok(d.path(), &["--config", "c.toml", "reward-probe", "--v", "10", "--vl", "10", "--g", "17"]);
    let b: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(b["g_opt"].as_f64().unwrap(), 22.0);

    fs::write(d.path().join("bad.toml"), "[sim]\nbogus = 1\n").unwrap();
    assert!(err(d.path(), &["--config", "bad.toml", "reward-probe", "--v", "1", "--vl", "1", "--g", "5"]).contains("config"));
}

#[test]
fn bad_arguments_are_rejected() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert!(err(p, &["train", "--mode", "sarsa", "--out", "x"]).contains("unknown training mode"));
    assert!(err(p, &["train", "--mode", "bc", "--out", "x"]).contains("--dataset is required"));
    assert!(err(p, &["eval", "--agents", "idm", "--scenario", "builtin:nope", "--out", "e"]).contains("unknown scenario"));
    assert!(err(p, &["eval", "--agents", "x=ddpg", "--scenario", "builtin:s53", "--out", "e"]).contains("bad agent spec"));
    assert!(err(p, &["ingest", "--in", "nothing/*.csv", "--out", "s.bin"]).contains("matches no files"));
    fs::write(p.join("broken.csv"), "t_s,v_leader_mps,v_follower_mps,gap_m\n0,1,1,10\n0.1,1,oops,10\n").unwrap();
    assert!(err(p, &["ingest", "--in", "broken.csv", "--out", "s.bin"]).contains("line 3"));
}

#[test]
fn dataset_training_and_report_flow() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["make-synthetic", "--out", "human", "--episodes", "3", "--seed", "5"]);
    let msg = ok(p, &["ingest", "--in", "human/*.csv", "--out", "store/h.bin", "--source", "synthetic"]);
    assert!(msg.contains("2997 transitions from 3 episodes"), "{msg}");
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("store/h.bin.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["transitions"], 2997);

    ok(p, &["train", "--mode", "bc", "--dataset", "store/h.bin", "--out", "bc"]);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("bc/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["mode"], "bc");
    assert!(summary["bc_eval_mse"].as_f64().unwrap() < 1.0);

    ok(p, &["train", "--mode", "pure", "--budget", "1500", "--out", "pure"]);
    let rewards = fs::read_to_string(p.join("pure/rewards.csv")).unwrap();
    assert!(rewards.starts_with("episode,steps,mean_reward,collisions\n"));
    let steps: usize = rewards.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(steps, 1500);
    assert!(p.join("pure/config.toml").exists() && p.join("pure/actor.mlp").exists());

    ok(p, &["train", "--mode", "two-stage", "--init", "pure", "--dataset", "store/h.bin", "--ratio", "0.4", "--budget", "1000", "--out", "two"]);
    assert!(fs::read_to_string(p.join("two/config.toml")).unwrap().contains("ratio = 0.4"));

    let table = ok(p, &["eval", "--agents", "rl=ddpg:two,clone=bc:bc,idm", "--scenario", "builtin:s53", "--out", "ev"]);
    for agent in ["rl", "clone", "idm"] {
        assert!(table.contains(agent));
        assert!(p.join(format!("ev/trace_{agent}.csv")).exists());
    }
    let before = fs::read(p.join("ev/ttc_summary.csv")).unwrap();
    fs::remove_file(p.join("ev/ttc_summary.csv")).unwrap();
    ok(p, &["report", "--in", "ev"]);
    assert_eq!(fs::read(p.join("ev/ttc_summary.csv")).unwrap(), before);

    ok(p, &["eval", "--agents", "idm", "--scenario", "suite:synthetic", "--suite-size", "2", "--out", "suite"]);
    assert!(p.join("suite/suite_summary.csv").exists() && p.join("suite/synthetic_01/trace_idm.csv").exists());

    let cal = ok(p, &["calibrate-idm", "--dataset", "human/*.csv", "--source", "synthetic"]);
    let cal: serde_json::Value = serde_json::from_str(&cal).unwrap();
    assert_eq!(cal["params"]["t_gap"].as_f64().unwrap(), 1.0);
    assert!(cal["rmse"].as_f64().unwrap() < 1e-9);
}

#[test]
fn control_subcommands() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["control", "collect", "--duration-s", "200", "--seed", "1", "--out", "rev.csv"]);
    assert!(fs::read_to_string(p.join("rev.csv")).unwrap().starts_with("v_next_mps,v_mps,a_mps2,throttle,brake\n"));
    ok(p, &["control", "train", "--data", "rev.csv", "--out", "net"]);
    let out = ok(p, &["control", "probe", "--net", "net", "--out", "probe.csv"]);
    let rmse: f64 = out.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(rmse < 0.3, "{out}");
    assert_eq!(fs::read_to_string(p.join("probe.csv")).unwrap().lines().count(), 601);
}
