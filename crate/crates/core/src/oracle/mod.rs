//! Deterministic rule-based decomposition.
//!
//! The oracle classifies intents by keyword, extracts entities by pattern,
//! and walks per-type template sequences, reacting to execution feedback.
//! It backs the offline pipeline and serves as the reference for any other
//! backend's output.

pub mod entities;
pub mod plan;
pub mod templates;

use thiserror::Error;

use crate::executor::feedback::parse_feedback;
pub use crate::executor::knowledge::RunKind;

pub use entities::{
    classify_keywords, extract_entities, format_types, normalize_types, AvailabilityLevel,
    EntitySet, IntentType, Lexicon, VmRequest, GENERIC_ROLE,
};
pub use plan::{
    pick_relaxation, plan, plan_assurance, Decision, DriftInfo, PlanSettings, PlanState,
    DEFAULT_SINK,
};
pub use templates::{Expansion, StepTemplate, TemplateSet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("entity extraction incomplete: {0}")]
    ExtractionIncomplete(String),
    #[error("unsupported intent type: {0}")]
    UnsupportedType(String),
    #[error("bad template table: {0}")]
    BadTemplates(String),
}

pub const CLASSIFY_PREFIX: &str = "Classify: ";
pub const VALIDATE_PREFIX: &str = "Validate: ";
pub const NO_TYPES_REPLY: &str = "NONE";
pub const VALID_REPLY: &str = "VALID";

/// The opening stage-2 message: intent, types, mode and optional drift.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecompositionRequest {
    pub text: String,
    pub types: Vec<IntentType>,
    pub mode: RunKind,
    pub drift: Option<String>,
}

impl DecompositionRequest {
    pub fn to_message(&self) -> String {
        let mut msg = format!(
            "Intent: {}\nIntent types: {}\nMode: {}",
            self.text,
            format_types(&self.types),
            self.mode
        );
        if let Some(d) = &self.drift {
            msg.push_str("\nDrift: ");
            msg.push_str(d);
        }
        msg
    }

    pub fn parse(msg: &str) -> Option<Self> {
        let mut text = None;
        let mut types = Vec::new();
        let mut mode = RunKind::Fulfillment;
        let mut drift = None;
        for line in msg.lines() {
            if let Some(t) = line.strip_prefix("Intent: ") {
                text = Some(t.to_string());
            } else if let Some(t) = line.strip_prefix("Intent types: ") {
                types = t.split(',').filter_map(|s| s.parse().ok()).collect();
            } else if let Some(m) = line.strip_prefix("Mode: ") {
                mode = if m.trim() == "assurance" {
                    RunKind::Assurance
                } else {
                    RunKind::Fulfillment
                };
            } else if let Some(d) = line.strip_prefix("Drift: ") {
                drift = Some(d.to_string());
            }
        }
        Some(Self {
            text: text?,
            types,
            mode,
            drift,
        })
    }
}

/// The rule-based decomposer with its data tables.
#[derive(Debug, Clone, Default)]
pub struct Oracle {
    pub templates: TemplateSet,
    pub lexicon: Lexicon,
    pub settings: PlanSettings,
}

impl Oracle {
    pub fn new(templates: TemplateSet, lexicon: Lexicon, settings: PlanSettings) -> Self {
        Self {
            templates,
            lexicon,
            settings,
        }
    }

    pub fn extract(&self, text: &str) -> Result<EntitySet, OracleError> {
        extract_entities(text, &self.lexicon)
    }

    /// Reply to a stage-1 message.
    pub fn classify_reply(&self, message: &str) -> String {
        let text = message.strip_prefix(CLASSIFY_PREFIX).unwrap_or(message);
        let types = classify_keywords(text);
        if types.is_empty() {
            NO_TYPES_REPLY.to_string()
        } else {
            format_types(&types)
        }
    }

    /// Builds the plan a stage-2 request asks for.
    pub fn plan_for(&self, req: &DecompositionRequest) -> Result<PlanState, OracleError> {
        let entities = self.extract(&req.text)?;
        match (req.mode, &req.drift) {
            (RunKind::Assurance, Some(d)) => {
                let drift = DriftInfo::parse(d).ok_or_else(|| {
                    OracleError::ExtractionIncomplete(format!("unreadable drift message {d:?}"))
                })?;
                plan_assurance(&self.templates, &req.types, &entities, &drift, &self.settings)
            }
            (RunKind::Assurance, None) => Err(OracleError::ExtractionIncomplete(
                "assurance request without drift".into(),
            )),
            (RunKind::Fulfillment, _) => plan(&self.templates, &req.types, &entities, &self.settings),
        }
    }

    /// Reply to a stage-2 conversation, given its user messages in order.
    /// The plan is rebuilt from the opening request and advanced by every
    /// feedback line, so the reply depends only on the history.
    pub fn decompose_reply(&self, user_messages: &[&str]) -> String {
        let Some(req) = user_messages.first().and_then(|m| DecompositionRequest::parse(m)) else {
            return "ERROR".to_string();
        };
        let mut state = match self.plan_for(&req) {
            Ok(s) => s,
            Err(e) => {
                log::debug!("oracle cannot plan: {e}");
                return "ERROR".to_string();
            }
        };
        let mut decision = state.next_policy(None);
        for msg in &user_messages[1..] {
            if let Some(fb) = parse_feedback(msg) {
                decision = state.next_policy(Some(&fb));
            }
        }
        match decision {
            Decision::Emit(p) => p.to_json(),
            Decision::End => "END".to_string(),
            Decision::Error(reason) => {
                log::debug!("oracle stops: {reason}");
                "ERROR".to_string()
            }
        }
    }

    /// Reply to a stage-3 message. Structural checks live in the rule-based
    /// validator, so the oracle has nothing to add.
    pub fn validate_reply(&self, _message: &str) -> String {
        VALID_REPLY.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_round_trip() {
        let req = DecompositionRequest {
            text: "Create a small monitored VM in domain 1.".into(),
            types: vec![IntentType::CreateResource, IntentType::ScheduleHealthCheck],
            mode: RunKind::Assurance,
            drift: Some("The state of the generic VM vm-1 is Shutdown, expected Running. Fix the intent.".into()),
        };
        assert_eq!(DecompositionRequest::parse(&req.to_message()), Some(req));
    }

    #[test]
    fn reply_depends_only_on_history() {
        let oracle = Oracle::default();
        let open = DecompositionRequest {
            text: "Create a small monitored VM in domain 1.".into(),
            types: vec![IntentType::CreateResource, IntentType::ScheduleHealthCheck],
            mode: RunKind::Fulfillment,
            drift: None,
        }
        .to_message();
        let first = oracle.decompose_reply(&[&open]);
        assert_eq!(first, r#"{"action":"get","resource":"inventory","zone":"Domain1"}"#);
        assert_eq!(oracle.decompose_reply(&[&open]), first);
        let second = oracle.decompose_reply(&[&open, "True"]);
        assert!(second.contains(r#""action":"avail""#));
        // Re-prompts carry no feedback and leave the plan where it was.
        assert_eq!(
            oracle.decompose_reply(&[&open, "True", "Output only the policy JSON."]),
            second
        );
        assert_eq!(oracle.decompose_reply(&[&open, "True", "False"]), "ERROR");
        assert_eq!(oracle.decompose_reply(&["hello"]), "ERROR");
    }

    #[test]
    fn classify_replies() {
        let oracle = Oracle::default();
        assert_eq!(
            oracle.classify_reply("Classify: Create a small monitored VM in domain 1."),
            "create-resource, schedule-health-check"
        );
        assert_eq!(oracle.classify_reply("Classify: Make me a sandwich"), NO_TYPES_REPLY);
    }
}
