use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const BIN: &str = env!("CARGO_BIN_EXE_submfq");

fn config(dir: &Path, gamma: f64, n: usize, ks: &str) -> PathBuf {
    let text = format!(
        r#"{{
            "environment": {{"name": "random", "params": {{"seed": 4, "sizes": {{
                "n": {n}, "global_states": 2, "local_states": 2, "global_actions": 2, "local_actions": 2, "gamma": {gamma}}}}}}},
            "learner": {{"mode": "sampled", "iterations": 40, "m": 6}},
            "execution": {{"strategy": "independent", "horizon": 25, "episodes": 50}},
            "sweep": {{"k": {ks}}},
            "seed": 17
        }}"#
    );
    let path = dir.join(format!("config_{gamma}_{n}.json"));
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn hash(path: &Path) -> String {
    format!("{:x}", Sha256::digest(std::fs::read(path).unwrap()))
}

/// Hash of a JSON file without timing fields or the output directory.
fn hash_json_without_timing(path: &Path) -> String {
    fn strip(v: &mut serde_json::Value) {
        match v {
            serde_json::Value::Object(map) => {
                map.retain(|k, _| !k.ends_with("_seconds") && k != "output_dir");
                map.values_mut().for_each(strip);
            }
            serde_json::Value::Array(items) => items.iter_mut().for_each(strip),
            _ => {}
        }
    }
    let text = std::fs::read_to_string(path).unwrap();
    let docs: Vec<&str> = if path.extension().is_some_and(|e| e == "jsonl") {
        text.lines().collect()
    } else {
        vec![&text]
    };
    let mut out = String::new();
    for doc in docs {
        let mut v: serde_json::Value = serde_json::from_str(doc).unwrap();
        strip(&mut v);
        out.push_str(&v.to_string());
        out.push('\n');
    }
    format!("{:x}", Sha256::digest(out.as_bytes()))
}

#[test]
fn learn_is_deterministic_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 0.8, 3, "[2]");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["learn", "--config", s(&cfg), "--out", s(out), "--quiet"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(hash(&a.join("qtable.bin")), hash(&b.join("qtable.bin")));
    assert_eq!(hash(&a.join("qtable.csv")), hash(&b.join("qtable.csv")));
    assert_eq!(
        hash_json_without_timing(&a.join("learn_report.json")),
        hash_json_without_timing(&b.join("learn_report.json"))
    );
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("learn_report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["seed"], 17);
    assert_eq!(report["k"], 2);
    assert!(report["seeds"]["learn"].is_u64());
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("qtable.bin.json")).unwrap()).unwrap();
    assert_eq!(sidecar["metadata"]["seeds"], report["seeds"]);

    let c = dir.path().join("c");
    let o = run(&["learn", "--config", s(&cfg), "--out", s(&c), "--seed", "18", "--quiet"]);
    assert!(o.status.success());
    assert_ne!(hash(&a.join("qtable.bin")), hash(&c.join("qtable.bin")));
}

#[test]
fn minimal_single_agent_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 0.5, 1, "[1]");
    let out = dir.path().join("o");
    let o = run(&["learn", "--config", s(&cfg), "--out", s(&out), "--tol", "1e-6", "--quiet"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("learn_report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["learner"]["tol"], 1e-6);
    assert_eq!(report["table_entries"], 16);
}

#[test]
fn discount_of_one_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 1.0, 2, "[1]");
    let o = run(&["learn", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 0.5, 2, "[1]");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("\"seed\": 17", "\"seed\": 17, \"sede\": 1");
    std::fs::write(&cfg, text).unwrap();
    let o = run(&["sweep", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sede"));
}

#[test]
fn execute_summary_matches_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 0.8, 3, "[3]");
    let out = dir.path().join("o");
    assert!(run(&["learn", "--config", s(&cfg), "--out", s(&out), "--quiet"]).status.success());
    let table = out.join("qtable.bin");
    let mut summaries = Vec::new();
    for strategy in ["independent", "weak_shared"] {
        let sub = dir.path().join(strategy);
        let o = run(&["execute", "--config", s(&cfg), "--out", s(&sub), "--qtable", s(&table), "--strategy", strategy, "--quiet"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(sub.join("execute_summary.json")).unwrap()).unwrap();
        assert_eq!(summary["horizon"], 25);
        let csv = std::fs::read_to_string(sub.join("trajectory.csv")).unwrap();
        let gamma = 0.8f64;
        let (mut total, mut disc) = (0.0, 1.0);
        for line in csv.lines().skip(1) {
            total += disc * line.rsplit(',').next().unwrap().parse::<f64>().unwrap();
            disc *= gamma;
        }
        assert_eq!(total, summary["discounted_return"].as_f64().unwrap());
        summaries.push((csv, summary["evaluation"]["mean"].as_f64().unwrap()));
    }
    // k = n forces every subset, so the two strategies coincide.
    assert_eq!(summaries[0], summaries[1]);
}

#[test]
fn sweep_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 0.8, 3, "[1, 2, 3]");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, jobs) in [(&a, "1"), (&b, "2")] {
        let o = run(&["sweep", "--config", s(&cfg), "--out", s(out), "--jobs", jobs, "--quiet"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(
        hash_json_without_timing(&a.join("records.jsonl")),
        hash_json_without_timing(&b.join("records.jsonl"))
    );
    assert_eq!(
        hash_json_without_timing(&a.join("manifest.json")),
        hash_json_without_timing(&b.join("manifest.json"))
    );
    let csv = std::fs::read_to_string(a.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "k,m,return,half_width,learn_seconds,table_entries");
    assert_eq!(lines.len(), 4);
    let records = std::fs::read_to_string(a.join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 3);
    let first: serde_json::Value = serde_json::from_str(records.lines().next().unwrap()).unwrap();
    assert_eq!(first["config"]["seed"], 17);
    assert!(first["seeds"]["eval"].is_u64());
}

#[test]
fn verify_exit_codes_and_schema() {
    let dir = tempfile::tempdir().unwrap();
    let ok = run(&["verify", "reward_average", "layout_equivalence", "--quiet", "--seed", "3"]);
    assert_eq!(ok.status.code(), Some(0));
    let reports: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    let arr = reports.as_array().unwrap();
    assert_eq!(arr.len(), 2);
    for r in arr {
        for key in ["name", "instances", "trials", "violations", "worst_margin", "passed", "statistical", "parameters"] {
            assert!(r.get(key).is_some(), "missing {key}");
        }
    }
    let again = run(&["verify", "reward_average", "layout_equivalence", "--quiet", "--seed", "3"]);
    assert_eq!(ok.stdout, again.stdout);

    let bad = run(&["verify", "contraction", "--perturb-gamma", "0.3", "--quiet", "--out", s(dir.path())]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(dir.path().join("verify.json").exists());

    let unknown = run(&["verify", "no_such_check", "--quiet"]);
    assert_eq!(unknown.status.code(), Some(2));
}
