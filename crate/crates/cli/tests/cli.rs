use std::path::Path;
use std::process::{Command, Output};

fn intentctl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_intentctl"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn demo_scenarios_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    for (sc, n) in [("fulfill", 11), ("assure-1", 2), ("assure-2", 10)] {
        let o = intentctl(dir.path(), &["demo", sc, "--out", "report.json"]);
        assert_eq!(o.status.code(), Some(0), "{sc}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains(&format!("{sc}: {n} policies (expected {n}), END")));
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(report["policies"], n);
    }
}

#[test]
fn session_persists_between_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let o = intentctl(dir.path(), &["submit", "Create a small monitored VM in domain 1."]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("intent-1 fulfilled"));
    assert_eq!(intentctl(dir.path(), &["inject", "shutdown:vm-1"]).status.code(), Some(0));
    let o = intentctl(dir.path(), &["tick", "5"]);
    let tick: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(tick["assurance"][0]["trees"][0], 2);
    let o = intentctl(dir.path(), &["status", "intent-1"]);
    let status: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(status["trees"], 2);
    let o = intentctl(dir.path(), &["tree", "intent-1"]);
    assert!(stdout(&o).contains("assurance tree for intent-1"));
    let o = intentctl(dir.path(), &["drift"]);
    let drifts: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(drifts.as_array().unwrap().len(), 1);
    let o = intentctl(dir.path(), &["twin"]);
    assert!(stdout(&o).contains("\"vm-1\""));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(intentctl(p, &["status", "intent-4"]).status.code(), Some(1));

    std::fs::write(p.join("bad.toml"), "step_budget = 0\n").unwrap();
    assert_eq!(intentctl(p, &["--config", "bad.toml", "twin"]).status.code(), Some(2));

    std::fs::write(p.join("small.toml"), "[capacity.Domain1]\nvcpu = 1\nram_gb = 2\ndisk_gb = 20\n").unwrap();
    let o = intentctl(p, &["--config", "small.toml", "demo", "fulfill"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));

    std::fs::write(p.join("empty.jsonl"), "").unwrap();
    std::fs::write(p.join("replay.toml"), "backend = \"replay:empty.jsonl\"\n").unwrap();
    let o = intentctl(p, &["--config", "replay.toml", "demo", "fulfill"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}
