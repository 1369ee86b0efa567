//! Transcripts: recording exchanges and replaying them deterministically.

use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, LlmError, Message};

/// One recorded completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExchangeRecord {
    pub seq: u64,
    pub prompt_digest: String,
    pub response: String,
}

/// Hash of the message list. Runs of whitespace inside a message collapse
/// to one space first, so cosmetic spacing does not change the digest.
pub fn prompt_digest(messages: &[Message]) -> String {
    let canonical: Vec<String> = messages
        .iter()
        .map(|m| {
            let content = m.content.split_whitespace().collect::<Vec<_>>().join(" ");
            format!("{}\n{}", m.role.as_str(), content)
        })
        .collect();
    hex::encode(Sha256::digest(canonical.join("\n").as_bytes()))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub records: Vec<ExchangeRecord>,
}

impl Transcript {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self, LlmError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ExchangeRecord = serde_json::from_str(line)
                .map_err(|e| LlmError::BadTranscript(format!("line {}: {e}", i + 1)))?;
            if rec.seq != records.len() as u64 {
                return Err(LlmError::BadTranscript(format!(
                    "line {}: expected seq {}, found {}",
                    i + 1,
                    records.len(),
                    rec.seq
                )));
            }
            records.push(rec);
        }
        Ok(Self { records })
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = fs::read_to_string(path)
            .map_err(|e| LlmError::BadTranscript(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), LlmError> {
        fs::write(path, self.to_jsonl())
            .map_err(|e| LlmError::SinkUnwritable(format!("{}: {e}", path.display())))
    }
}

/// Wraps a backend and records every exchange it serves.
pub struct RecordingBackend {
    inner: Box<dyn Backend>,
    records: Mutex<Vec<ExchangeRecord>>,
}

impl RecordingBackend {
    pub fn new(inner: Box<dyn Backend>) -> Self {
        Self {
            inner,
            records: Mutex::new(Vec::new()),
        }
    }

    pub fn transcript(&self) -> Transcript {
        Transcript {
            records: self.records.lock().unwrap_or_else(|e| e.into_inner()).clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<Transcript, LlmError> {
        let t = self.transcript();
        t.save(path)?;
        Ok(t)
    }
}

impl Backend for RecordingBackend {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, messages: &[Message]) -> Result<String, LlmError> {
        // Hold the lock across the call so seq order matches call order.
        let mut records = self.records.lock().unwrap_or_else(|e| e.into_inner());
        let response = self.inner.complete(messages)?;
        let seq = records.len() as u64;
        records.push(ExchangeRecord {
            seq,
            prompt_digest: prompt_digest(messages),
            response: response.clone(),
        });
        Ok(response)
    }
}

/// Serves recorded responses in order, checking each prompt digest.
pub struct ReplayBackend {
    records: Vec<ExchangeRecord>,
    cursor: Mutex<usize>,
}

impl ReplayBackend {
    pub fn new(transcript: Transcript) -> Self {
        Self {
            records: transcript.records,
            cursor: Mutex::new(0),
        }
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        Ok(Self::new(Transcript::load(path)?))
    }

    /// Records not yet consumed.
    pub fn remaining(&self) -> usize {
        self.records.len() - *self.cursor.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Backend for ReplayBackend {
    fn name(&self) -> &str {
        "replay"
    }

    fn complete(&self, messages: &[Message]) -> Result<String, LlmError> {
        let mut cursor = self.cursor.lock().unwrap_or_else(|e| e.into_inner());
        let seq = *cursor as u64;
        let rec = self
            .records
            .get(*cursor)
            .ok_or(LlmError::ReplayExhausted { seq })?;
        let actual = prompt_digest(messages);
        if rec.seq != seq || rec.prompt_digest != actual {
            return Err(LlmError::ReplayMismatch {
                seq,
                expected: rec.prompt_digest.clone(),
                actual,
            });
        }
        *cursor += 1;
        Ok(rec.response.clone())
    }
}
