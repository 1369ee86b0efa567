//! Chat-completion adapter with interchangeable backends.
//!
//! A [`ChatSession`] owns its message history; the backend only sees the
//! history it is handed, so sessions never leak into each other. Backends:
//! the rule-based oracle, transcript replay, and a live HTTP endpoint, with
//! [`RecordingBackend`] wrapping any of them to capture a transcript.

mod live;
mod oracle_backend;
mod transcript;

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::policy::{policy_from_map, Policy, DEFAULT_DEFINER};

pub use live::{LiveBackend, LiveSettings};
pub use oracle_backend::OracleBackend;
pub use transcript::{
    prompt_digest, ExchangeRecord, RecordingBackend, ReplayBackend, Transcript,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("replay mismatch at record {seq}: recorded prompt {expected}, got {actual}")]
    ReplayMismatch {
        seq: u64,
        expected: String,
        actual: String,
    },
    #[error("replay exhausted after {seq} records")]
    ReplayExhausted { seq: u64 },
    #[error("cannot write transcript: {0}")]
    SinkUnwritable(String),
    #[error("bad transcript: {0}")]
    BadTranscript(String),
}

/// A completion backend. Implementations must be pure with respect to the
/// message list they receive, apart from replay position or recording.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, messages: &[Message]) -> Result<String, LlmError>;
}

/// Append-only conversation bound to a backend. A new intent always starts
/// a new session.
pub struct ChatSession<'b> {
    id: String,
    messages: Vec<Message>,
    backend: &'b dyn Backend,
}

impl<'b> ChatSession<'b> {
    pub fn new(id: impl Into<String>, backend: &'b dyn Backend, system: &str) -> Self {
        Self {
            id: id.into(),
            messages: vec![Message::new(Role::System, system)],
            backend,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    /// Sends `message` and returns the reply. On error the history is left
    /// as it was.
    pub fn complete(&mut self, message: &str) -> Result<String, LlmError> {
        self.messages.push(Message::new(Role::User, message));
        match self.backend.complete(&self.messages) {
            Ok(reply) => {
                self.messages.push(Message::new(Role::Assistant, reply.clone()));
                Ok(reply)
            }
            Err(e) => {
                self.messages.pop();
                Err(e)
            }
        }
    }
}

/// Backend that returns canned replies in order, ignoring the prompt.
pub struct ScriptedBackend {
    replies: Mutex<std::collections::VecDeque<String>>,
}

impl ScriptedBackend {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self {
            replies: Mutex::new(replies.into_iter().map(Into::into).collect()),
        }
    }
}

impl Backend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, _messages: &[Message]) -> Result<String, LlmError> {
        self.replies
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .pop_front()
            .ok_or(LlmError::ReplayExhausted { seq: 0 })
    }
}

/// What a stage-2 reply amounts to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LlmReply {
    Policy(Policy),
    End,
    Error,
    Unparseable(String),
}

/// Interprets a stage-2 reply: the first JSON object is parsed as a policy;
/// a bare END or ERROR is a terminal.
pub fn parse_llm_policy(reply: &str) -> LlmReply {
    let bare = reply
        .trim()
        .trim_matches(|c: char| c == '`' || c == '"' || c == '\'' || c == '.' || c.is_whitespace());
    match bare {
        "END" => return LlmReply::End,
        "ERROR" => return LlmReply::Error,
        _ => {}
    }
    let Some(start) = reply.find('{') else {
        return LlmReply::Unparseable("no JSON object in reply".into());
    };
    let mut stream = serde_json::Deserializer::from_str(&reply[start..]).into_iter::<Value>();
    match stream.next() {
        Some(Ok(Value::Object(map))) => match policy_from_map(&map, DEFAULT_DEFINER) {
            Ok(p) => LlmReply::Policy(p),
            Err(e) => LlmReply::Unparseable(e.to_string()),
        },
        Some(Ok(_)) => LlmReply::Unparseable("reply JSON is not an object".into()),
        Some(Err(e)) => LlmReply::Unparseable(format!("malformed JSON: {e}")),
        None => LlmReply::Unparseable("no JSON object in reply".into()),
    }
}
