//! OpenAI-style chat-completion client.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, LlmError, Message};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiveSettings {
    /// Base URL; `/chat/completions` is appended.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
}

impl Default for LiveSettings {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".to_string(),
            model: "gpt-4".to_string(),
            api_key_env: "INTENT_API_KEY".to_string(),
            timeout_secs: 60,
        }
    }
}

pub struct LiveBackend {
    settings: LiveSettings,
    agent: ureq::Agent,
}

impl LiveBackend {
    pub fn new(settings: LiveSettings) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(settings.timeout_secs)))
            .build()
            .into();
        Self { settings, agent }
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.settings.endpoint.trim_end_matches('/'))
    }
}

impl Backend for LiveBackend {
    fn name(&self) -> &str {
        "live"
    }

    fn complete(&self, messages: &[Message]) -> Result<String, LlmError> {
        let body = json!({
            "model": self.settings.model,
            "temperature": 0,
            "messages": messages
                .iter()
                .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
                .collect::<Vec<_>>(),
        });
        let mut req = self.agent.post(&self.url());
        match std::env::var(&self.settings.api_key_env) {
            Ok(key) => req = req.header("Authorization", &format!("Bearer {key}")),
            Err(_) => log::warn!("{} is not set; sending without credentials", self.settings.api_key_env),
        }
        let unavailable = |e: ureq::Error| LlmError::BackendUnavailable(e.to_string());
        let mut resp = req.send_json(&body).map_err(unavailable)?;
        let value: Value = resp.body_mut().read_json().map_err(unavailable)?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(String::from)
            .ok_or_else(|| {
                LlmError::BackendUnavailable("response has no choices[0].message.content".into())
            })
    }
}
