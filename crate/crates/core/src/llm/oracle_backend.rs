use crate::oracle::{Oracle, CLASSIFY_PREFIX, VALIDATE_PREFIX};

use super::{Backend, LlmError, Message, Role};

/// The rule-based oracle behind the completion interface. The stage is read
/// off the first user message.
#[derive(Debug, Clone, Default)]
pub struct OracleBackend {
    pub oracle: Oracle,
}

impl OracleBackend {
    pub fn new(oracle: Oracle) -> Self {
        Self { oracle }
    }
}

impl Backend for OracleBackend {
    fn name(&self) -> &str {
        "oracle"
    }

    fn complete(&self, messages: &[Message]) -> Result<String, LlmError> {
        let users: Vec<&str> = messages
            .iter()
            .filter(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .collect();
        let Some(first) = users.first() else {
            return Ok("ERROR".to_string());
        };
        Ok(if first.starts_with(CLASSIFY_PREFIX) {
            self.oracle.classify_reply(users.last().unwrap_or(first))
        } else if first.starts_with(VALIDATE_PREFIX) {
            self.oracle.validate_reply(first)
        } else {
            self.oracle.decompose_reply(&users)
        })
    }
}
