//! Stage 1: intent classification.

use crate::llm::{Backend, ChatSession};
use crate::oracle::{normalize_types, IntentType, CLASSIFY_PREFIX};

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classification {
    pub types: Vec<IntentType>,
    /// Labels the backend produced that are not supported types.
    pub dropped: Vec<String>,
}

/// Splits a classifier reply into known types and unknown labels.
pub fn parse_type_list(reply: &str) -> (Vec<IntentType>, Vec<String>) {
    let mut types = Vec::new();
    let mut dropped = Vec::new();
    for raw in reply.split([',', '\n', ';']) {
        let label = raw
            .trim()
            .trim_start_matches(['-', '*'])
            .trim()
            .trim_matches(|c: char| c == '.' || c == '"' || c == '`' || c == '\'');
        if label.is_empty() || label.eq_ignore_ascii_case("none") {
            continue;
        }
        match label.parse::<IntentType>() {
            Ok(t) => types.push(t),
            Err(()) => dropped.push(label.to_string()),
        }
    }
    (normalize_types(&types), dropped)
}

/// Classifies `text` in a fresh session.
pub fn classify(
    text: &str,
    backend: &dyn Backend,
    system: &str,
) -> Result<Classification, PipelineError> {
    if text.trim().is_empty() {
        return Err(PipelineError::ClassificationEmpty(text.to_string()));
    }
    let mut session = ChatSession::new("classify", backend, system);
    let reply = session.complete(&format!("{CLASSIFY_PREFIX}{}", text.trim()))?;
    let (types, dropped) = parse_type_list(&reply);
    for label in &dropped {
        log::warn!("dropping unsupported intent type {label:?}");
    }
    if types.is_empty() {
        return Err(PipelineError::ClassificationEmpty(text.to_string()));
    }
    Ok(Classification { types, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{OracleBackend, ScriptedBackend};

    #[test]
    fn drops_unknown_labels() {
        let (types, dropped) = parse_type_list("deploy-service, teleport, create resource.");
        assert_eq!(types, [IntentType::CreateResource, IntentType::DeployService]);
        assert_eq!(dropped, ["teleport"]);
    }

    #[test]
    fn empty_classification() {
        let oracle = OracleBackend::default();
        assert!(matches!(
            classify("Make me a sandwich", &oracle, "sys"),
            Err(PipelineError::ClassificationEmpty(_))
        ));
        assert!(matches!(
            classify("  ", &oracle, "sys"),
            Err(PipelineError::ClassificationEmpty(_))
        ));
        let junk = ScriptedBackend::new(["teleport, levitate"]);
        assert!(matches!(
            classify("Create a VM", &junk, "sys"),
            Err(PipelineError::ClassificationEmpty(_))
        ));
    }
}
