use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gossip-fair"));
    cmd.env("GOSSIP_FAIR_THREADS", "1");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn error_line(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

const TWO_NODE: &str = r#"{"network": {"n": 2, "edges": [[0, 1, 1.0], [1, 0, 1.0]], "budgets": [1.0, 1.0]},
    "lambda_e": 10, "lambda_total": 1}"#;

const SMALL: &str = r#"{"topology": {"kind": "uniform_degree", "min": 1, "max": 2, "n": 4, "capacity": 4.0},
    "iterations": 4, "seeds": [1, 2], "sim": {"horizon": 2000}}"#;

#[test]
fn oracle_on_two_node_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", TWO_NODE);
    let out = run(&["oracle", "--config", &cfg]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for a in v["per_node"].as_array().unwrap() {
        assert!((a.as_f64().unwrap() - 40.0 / 3.0).abs() < 1e-9);
    }
    assert!(String::from_utf8_lossy(&out.stdout).contains("13.333"));
}

#[test]
fn every_subcommand_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    for cmd in ["generate", "simulate", "oracle", "optimize"] {
        let a = run(&[cmd, "--config", &cfg, "--seed", "7"]);
        let b = run(&[cmd, "--config", &cfg, "--seed", "7"]);
        assert!(a.status.success(), "{cmd}: {}", String::from_utf8_lossy(&a.stderr));
        assert_eq!(a.stdout, b.stdout, "{cmd}");
        assert!(!a.stdout.is_empty());
    }

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["experiment", "--config", &cfg, "--out-dir", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["comparison.csv", "trace.jsonl", "histogram.csv", "degree_rate.csv", "network.json", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let header = fs::read_to_string(a.join("comparison.csv")).unwrap();
    assert_eq!(header.lines().next(), Some("seed,scheme,worst_age,node,node_age,out_deg,in_deg,rate"));
}

#[test]
fn generate_to_out_dir_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    let out_dir = dir.path().join("gen");
    assert!(run(&["generate", "--config", &cfg, "--seed", "3", "--out-dir", out_dir.to_str().unwrap()]).status.success());
    let stdout = run(&["generate", "--config", &cfg, "--seed", "3"]).stdout;
    assert_eq!(fs::read(out_dir.join("network.json")).unwrap(), stdout);
}

#[test]
fn simulate_trajectory_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &TWO_NODE.replace("\"lambda_total\": 1", "\"lambda_total\": 1, \"sim\": {\"horizon\": 50}"));
    let traj = dir.path().join("traj.csv");
    let out = run(&["simulate", "--config", &cfg, "--trajectory", traj.to_str().unwrap()]);
    assert!(out.status.success());
    let text = fs::read_to_string(traj).unwrap();
    assert_eq!(text.lines().next(), Some("time,node,delta"));
    assert!(text.lines().count() > 10);
}

#[test]
fn malformed_config_exits_two_with_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"iterations": -3}"#);
    let out = run(&["optimize", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let line = error_line(&out);
    assert_eq!(line["error"], "config");
    assert!(line["message"].as_str().unwrap().contains("iterations"));

    let out = run(&["oracle", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["oracle", "--config", &cfg, "--mode", "guess"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numeric_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{"network": {"n": 2, "edges": [], "budgets": [0.0, 0.0]},
        "allocation": [0.0, 0.0], "lambda_e": 0}"#;
    let cfg = write(dir.path(), "c.json", body);
    let out = run(&["simulate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(error_line(&out)["error"], "numeric");
}

#[test]
fn experiment_requires_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    let out = run(&["experiment", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_writes_per_size_directories() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{"topology": {"kind": "uniform_degree", "min": 1, "max": 3, "n": 4, "capacity": 4.0},
        "capacity_rule": "n", "n_values": [3, 4], "iterations": 3, "seeds": [0, 1], "mode": "oracle"}"#;
    let cfg = write(dir.path(), "c.json", body);
    let out_dir = dir.path().join("sweep");
    let out = run(&["experiment", "--config", &cfg, "--out-dir", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sweep = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().next(), Some("n,lambda_total,capacity,scheme,mean_worst_age,std_error,seeds"));
    assert_eq!(sweep.lines().count(), 1 + 2 * 2);
    assert!(out_dir.join("n3/comparison.csv").exists() && out_dir.join("n4/comparison.csv").exists());
}
