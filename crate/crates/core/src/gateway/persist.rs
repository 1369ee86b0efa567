//! Append-only JSON Lines persistence of intent records, plus the twin
//! snapshot.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::executor::record::JournalEntry;
use crate::executor::IntentRecord;
use crate::twin::TwinState;

use super::GatewayError;

pub const TWIN_FILE: &str = "twin.json";

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    /// Journal entries already on disk, per intent.
    written: HashMap<String, usize>,
}

fn io_err(path: &Path, e: std::io::Error) -> GatewayError {
    GatewayError::Persistence(format!("{}: {e}", path.display()))
}

impl Store {
    pub fn open(dir: &Path) -> Result<Self, GatewayError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: HashMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.jsonl"))
    }

    /// Appends the entries of `record` not yet on disk.
    pub fn persist(&mut self, record: &IntentRecord) -> Result<(), GatewayError> {
        let path = self.path_for(&record.id);
        let done = *self.written.get(&record.id).unwrap_or(&0);
        if done == 0 && path.exists() {
            return Err(GatewayError::Persistence(format!(
                "{} already exists",
                path.display()
            )));
        }
        let journal = record.journal();
        if journal.len() <= done {
            return Ok(());
        }
        let mut out = String::new();
        for e in &journal[done..] {
            out.push_str(&serde_json::to_string(e).expect("journal entries serialize"));
            out.push('\n');
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| io_err(&path, e))?;
        self.written.insert(record.id.clone(), journal.len());
        Ok(())
    }

    pub fn load(&mut self, id: &str) -> Result<IntentRecord, GatewayError> {
        let path = self.path_for(id);
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let rec = parse_journal(&path, &text)?;
        self.written.insert(rec.id.clone(), rec.journal().len());
        Ok(rec)
    }

    /// Loads every intent file, ordered by the number in its id.
    pub fn load_all(&mut self) -> Result<Vec<IntentRecord>, GatewayError> {
        let mut ids: Vec<String> = fs::read_dir(&self.dir)
            .map_err(|e| io_err(&self.dir, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_suffix(".jsonl").map(String::from)
            })
            .collect();
        ids.sort_by_key(|id| {
            let n: u64 = id.rsplit('-').next().and_then(|n| n.parse().ok()).unwrap_or(u64::MAX);
            (n, id.clone())
        });
        ids.iter().map(|id| self.load(id)).collect()
    }

    pub fn save_twin(&self, twin: &TwinState) -> Result<(), GatewayError> {
        let path = self.dir.join(TWIN_FILE);
        fs::write(&path, twin.to_json()).map_err(|e| io_err(&path, e))
    }

    pub fn load_twin(&self) -> Result<Option<TwinState>, GatewayError> {
        let path = self.dir.join(TWIN_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        TwinState::from_json(&text)
            .map(Some)
            .map_err(|e| GatewayError::Persistence(format!("{}: {e}", path.display())))
    }
}

/// Parses one intent file. Errors name the 1-based line.
pub fn parse_journal(path: &Path, text: &str) -> Result<IntentRecord, GatewayError> {
    let corrupt = |line: usize, reason: String| GatewayError::CorruptRecord {
        file: path.display().to_string(),
        line,
        reason,
    };
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let entry: JournalEntry =
            serde_json::from_str(line).map_err(|e| corrupt(i + 1, e.to_string()))?;
        entries.push(entry);
    }
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(corrupt(entries.len(), "final line is truncated".into()));
    }
    let n = entries.len();
    IntentRecord::from_journal(entries).map_err(|e| corrupt(n, e.to_string()))
}
