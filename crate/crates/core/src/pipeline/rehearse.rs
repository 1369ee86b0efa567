//! Rehearsal of a policy tree on a disposable copy of the twin.

use serde::{Deserialize, Serialize};

use crate::executor::{
    goal_predicate, map_policy_to_api, run_call, ExecutionResult, KnowledgeStore, MappingTable,
    Violation,
};
use crate::oracle::IntentType;
use crate::twin::TwinState;

use super::tree::PolicyTree;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RehearsalOutcome {
    pub passed: bool,
    /// First node whose rehearsal diverged from its recorded success.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_at: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
    pub detail: String,
}

impl RehearsalOutcome {
    fn fail(failed_at: Option<usize>, detail: impl Into<String>) -> Self {
        Self {
            passed: false,
            failed_at,
            violations: Vec::new(),
            detail: detail.into(),
        }
    }
}

/// Replays `tree` against a clone of `baseline` with knowledge seeded from
/// `seed`. Passes when every policy that succeeded originally succeeds
/// again and the goal predicate holds at the end. `baseline` is untouched.
pub fn twin_rehearse(
    types: &[IntentType],
    tree: &PolicyTree,
    baseline: &TwinState,
    seed: &KnowledgeStore,
    mapping: &MappingTable,
) -> RehearsalOutcome {
    if tree.is_empty() {
        return RehearsalOutcome::fail(None, "empty tree");
    }
    let mut twin = baseline.clone();
    let mut k = seed.clone();
    k.run = tree.kind;
    for (i, node) in tree.nodes.iter().enumerate() {
        let p = match node.parsed() {
            Ok(p) => p,
            Err(e) => return RehearsalOutcome::fail(Some(i), e.to_string()),
        };
        let result = match map_policy_to_api(&p, Some(&node.metadata.policy_id), &k, mapping, &twin)
        {
            Ok(call) => run_call(&call, p.action, &mut twin, &mut k)
                .unwrap_or_else(|e| ExecutionResult::failed(call.operation.name(), e.to_string())),
            Err(e) => ExecutionResult::failed("", e.to_string()),
        };
        if node.succeeded() && !result.success {
            return RehearsalOutcome::fail(
                Some(i),
                format!("policy {} failed in rehearsal: {}", i + 1, result.message),
            );
        }
    }
    let verdict = goal_predicate(types, &k, &twin);
    RehearsalOutcome {
        passed: verdict.holds(),
        failed_at: None,
        detail: if verdict.holds() {
            "goal holds".into()
        } else {
            "goal violated after rehearsal".into()
        },
        violations: verdict.violations().to_vec(),
    }
}
