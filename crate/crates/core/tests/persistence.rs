use std::fs;

use intent_core::executor::IntentStatus;
use intent_core::gateway::{
    parse_journal, Engine, EngineConfig, GatewayError, Store, SubmitOptions, TWIN_FILE, USE_CASE,
};
use intent_core::twin::FaultSpec;

fn config(dir: &std::path::Path) -> EngineConfig {
    EngineConfig {
        persistence_dir: Some(dir.to_path_buf()),
        ..Default::default()
    }
}

#[test]
fn engine_state_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (id, before, twin_before) = {
        let mut e = Engine::new(config(dir.path())).unwrap();
        let id = e.submit(USE_CASE, &SubmitOptions::default()).unwrap();
        let dpi = e.record(&id).unwrap().knowledge.vms_for_role("dpi")[0].clone();
        e.inject(&FaultSpec::Shutdown { vm: dpi }).unwrap();
        e.tick(10).unwrap();
        let rec = e.record(&id).unwrap().clone();
        (id, rec, e.twin().snapshot().to_json())
    };
    assert!(dir.path().join(TWIN_FILE).exists());
    assert_eq!(before.trees().count(), 2);

    let mut e = Engine::new(config(dir.path())).unwrap();
    let after = e.record(&id).unwrap();
    assert_eq!(after, &before);
    assert_eq!(after.status(), IntentStatus::Fulfilled);
    assert_eq!(e.twin().snapshot().to_json(), twin_before);

    // Later writes append to the same file and the next id continues.
    let id2 = e.submit("Create a small VM in Domain1.", &SubmitOptions::default()).unwrap();
    assert_eq!(id2, "intent-2");
    let reloaded = Engine::new(config(dir.path())).unwrap();
    assert_eq!(reloaded.records().len(), 2);
}

#[test]
fn journal_header_carries_schema() {
    let dir = tempfile::tempdir().unwrap();
    let mut e = Engine::new(config(dir.path())).unwrap();
    let id = e.submit(USE_CASE, &SubmitOptions::default()).unwrap();
    let text = fs::read_to_string(dir.path().join(format!("{id}.jsonl"))).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["record"], "header");
    assert_eq!(first["schema"], 1);
    assert!(text.lines().any(|l| l.contains("\"record\":\"validation\"")));
}

fn journal_text() -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let mut e = Engine::new(config(dir.path())).unwrap();
    let id = e.submit(USE_CASE, &SubmitOptions::default()).unwrap();
    let text = fs::read_to_string(dir.path().join(format!("{id}.jsonl"))).unwrap();
    (dir, text)
}

fn corrupt_line(err: GatewayError) -> usize {
    match err {
        GatewayError::CorruptRecord { line, .. } => line,
        other => panic!("expected corrupt record, got {other:?}"),
    }
}

#[test]
fn corruption_names_the_line() {
    let (dir, text) = journal_text();
    let path = dir.path().join("x.jsonl");
    let mut lines: Vec<&str> = text.lines().collect();
    lines[3] = "{\"record\":\"node\",";
    let broken = lines.join("\n") + "\n";
    assert_eq!(corrupt_line(parse_journal(&path, &broken).unwrap_err()), 4);

    let unknown = text.replacen("\"record\":\"header\"", "\"record\":\"header\",\"extra\":1", 1);
    assert_eq!(corrupt_line(parse_journal(&path, &unknown).unwrap_err()), 1);
}

#[test]
fn truncated_tail_is_rejected() {
    let (dir, text) = journal_text();
    let path = dir.path().join("x.jsonl");
    let cut = &text[..text.len() - 10];
    let n = text.lines().count();
    assert_eq!(corrupt_line(parse_journal(&path, cut).unwrap_err()), n);
    let no_newline = text.trim_end();
    assert!(parse_journal(&path, no_newline).is_err());
    assert!(parse_journal(&path, &text).is_ok());
}

#[test]
fn missing_header_is_rejected() {
    let (dir, text) = journal_text();
    let path = dir.path().join("x.jsonl");
    let headless: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
    assert!(matches!(
        parse_journal(&path, &headless),
        Err(GatewayError::CorruptRecord { .. })
    ));
}

#[test]
fn corrupt_file_stops_engine_start() {
    let dir = tempfile::tempdir().unwrap();
    {
        let mut e = Engine::new(config(dir.path())).unwrap();
        e.submit(USE_CASE, &SubmitOptions::default()).unwrap();
    }
    let path = dir.path().join("intent-1.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, &text[..text.len() / 2]).unwrap();
    assert!(matches!(
        Engine::new(config(dir.path())),
        Err(GatewayError::CorruptRecord { .. })
    ));
    // A fresh engine ignores the directory contents.
    assert!(Engine::fresh(EngineConfig::default()).is_ok());
}

#[test]
fn store_refuses_to_clobber_foreign_file() {
    let dir = tempfile::tempdir().unwrap();
    let (_d, text) = journal_text();
    fs::write(dir.path().join("intent-1.jsonl"), &text).unwrap();
    let mut store = Store::open(dir.path()).unwrap();
    let rec = parse_journal(&dir.path().join("intent-1.jsonl"), &text).unwrap();
    assert!(matches!(store.persist(&rec), Err(GatewayError::Persistence(_))));
}
