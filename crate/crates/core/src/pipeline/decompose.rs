//! Stage 2: progressive decomposition.
//!
//! One policy is requested at a time. Each is executed through the caller's
//! callback and the feedback line is the next user message, so the backend
//! always sees the result of policy k before producing policy k+1.

use crate::executor::{summarize_result, ExecutionResult, FeedbackMode};
use crate::llm::{parse_llm_policy, Backend, ChatSession, LlmReply};
use crate::oracle::DecompositionRequest;
use crate::policy::{ActionKind, Policy, PolicyIdGenerator, PolicyMetadata};
use crate::twin::Size;

use super::tree::{PolicyTree, Terminal, TreeNode, Warning};
use super::{PipelineError, DEFAULT_STEP_BUDGET, MAX_REPROMPTS, REPROMPT_MESSAGE};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecomposeOptions {
    pub budget: usize,
    pub feedback_mode: FeedbackMode,
    pub seed: u64,
    /// Index of the first policy of this run within the intent, so ids stay
    /// unique across trees.
    pub first_index: usize,
    pub definer: String,
    pub domain: String,
    pub priority: u8,
    pub expiration: Option<u64>,
    pub autonomic_permission: bool,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self {
            budget: DEFAULT_STEP_BUDGET,
            feedback_mode: FeedbackMode::Boolean,
            seed: 0,
            first_index: 0,
            definer: crate::policy::DEFAULT_DEFINER.to_string(),
            domain: String::new(),
            priority: 1,
            expiration: None,
            autonomic_permission: true,
        }
    }
}

fn avail_size(p: &Policy) -> Option<Size> {
    (p.action == ActionKind::Avail)
        .then(|| p.str_param("size")?.parse().ok())
        .flatten()
}

/// An avail right after a failed avail of another size is a relaxation.
fn relaxation(previous: Option<&TreeNode>, p: &Policy) -> Option<Warning> {
    let prev = previous?;
    if prev.succeeded() {
        return None;
    }
    let from = avail_size(&prev.parsed().ok()?)?;
    let to = avail_size(p)?;
    (from != to).then_some(Warning::Relaxed { from, to })
}

/// Runs stage 2 for one request until END, ERROR or the step budget.
pub fn decompose(
    req: &DecompositionRequest,
    intent_id: &str,
    backend: &dyn Backend,
    system: &str,
    opts: &DecomposeOptions,
    execute: &mut dyn FnMut(&Policy, &PolicyMetadata) -> ExecutionResult,
) -> Result<PolicyTree, PipelineError> {
    let ids = PolicyIdGenerator::new(opts.seed);
    let mut tree = PolicyTree::new(intent_id, req.mode, opts.feedback_mode);
    tree.drift = req.drift.clone();
    let mut session = ChatSession::new(format!("{intent_id}/{}", req.mode), backend, system);
    let mut message = req.to_message();
    let mut clock = 0u64;
    loop {
        let mut attempts = 0;
        let reply = loop {
            let text = session.complete(&message)?;
            match parse_llm_policy(&text) {
                LlmReply::Unparseable(why) if attempts < MAX_REPROMPTS => {
                    log::debug!("re-prompting after unparseable reply: {why}");
                    attempts += 1;
                    message = REPROMPT_MESSAGE.to_string();
                }
                other => break other,
            }
        };
        let mut policy = match reply {
            LlmReply::Policy(p) => p,
            LlmReply::End => {
                if tree.nodes.last().is_some_and(|n| !n.succeeded()) {
                    tree.terminal = Terminal::Error;
                    tree.error = Some("END after a failed policy".into());
                } else {
                    tree.terminal = Terminal::End;
                }
                return Ok(tree);
            }
            LlmReply::Error => {
                tree.terminal = Terminal::Error;
                return Ok(tree);
            }
            LlmReply::Unparseable(why) => {
                tree.terminal = Terminal::Error;
                tree.error = Some(format!("unparseable reply after {MAX_REPROMPTS} re-prompts: {why}"));
                return Ok(tree);
            }
        };
        if tree.len() >= opts.budget {
            return Err(PipelineError::StepBudgetExceeded {
                budget: opts.budget,
                tree: Box::new(tree),
            });
        }
        policy.definer = opts.definer.clone();
        let mut warnings: Vec<Warning> = policy
            .constraints
            .unrecognized_keys()
            .into_iter()
            .map(|key| Warning::UnknownConstraintKey { key: key.to_string() })
            .collect();
        if attempts > 0 {
            warnings.push(Warning::Reprompted { attempts });
        }
        warnings.extend(relaxation(tree.nodes.last(), &policy));
        let index = tree.len();
        let metadata = PolicyMetadata {
            policy_id: ids.id(intent_id, opts.first_index + index),
            domain: if opts.domain.is_empty() {
                policy.str_param("zone").unwrap_or_default().to_string()
            } else {
                opts.domain.clone()
            },
            expiration: opts.expiration,
            priority: opts.priority,
            autonomic_permission: opts.autonomic_permission,
        };
        clock += 1;
        let requested_at = clock;
        let result = execute(&policy, &metadata);
        clock += 1;
        let feedback = summarize_result(&result, opts.feedback_mode);
        tree.nodes.push(TreeNode {
            index,
            policy: policy.to_json(),
            stage: policy.enforcer,
            metadata,
            result: Some(result),
            feedback: feedback.clone(),
            warnings,
            requested_at,
            recorded_at: clock,
        });
        message = feedback;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedBackend;
    use crate::oracle::{IntentType, RunKind};

    fn req() -> DecompositionRequest {
        DecompositionRequest {
            text: "Create a small VM in domain 1.".into(),
            types: vec![IntentType::CreateResource],
            mode: RunKind::Fulfillment,
            drift: None,
        }
    }

    const GET: &str = r#"{"action":"get","resource":"inventory","zone":"Domain1"}"#;

    #[test]
    fn reprompts_then_errors() {
        let backend = ScriptedBackend::new(["hmm", "let me think", "still no json"]);
        let mut exec = |_: &Policy, _: &PolicyMetadata| ExecutionResult::ok("x", "", Default::default());
        let tree = decompose(&req(), "i1", &backend, "s", &DecomposeOptions::default(), &mut exec).unwrap();
        assert_eq!(tree.terminal, Terminal::Error);
        assert!(tree.is_empty());

        let backend = ScriptedBackend::new(["hmm", GET, "END"]);
        let tree = decompose(&req(), "i1", &backend, "s", &DecomposeOptions::default(), &mut exec).unwrap();
        assert_eq!(tree.terminal, Terminal::End);
        assert_eq!(tree.nodes[0].warnings, [Warning::Reprompted { attempts: 1 }]);
        assert!(tree.is_progressive());
    }

    #[test]
    fn end_after_failure_is_error() {
        let backend = ScriptedBackend::new([GET, "END"]);
        let mut exec = |_: &Policy, _: &PolicyMetadata| ExecutionResult::failed("get_inventory", "no");
        let tree = decompose(&req(), "i1", &backend, "s", &DecomposeOptions::default(), &mut exec).unwrap();
        assert_eq!(tree.terminal, Terminal::Error);
    }

    #[test]
    fn budget() {
        let backend = ScriptedBackend::new([GET, GET, GET, GET, "END"]);
        let mut calls = 0;
        let mut exec = |_: &Policy, _: &PolicyMetadata| {
            calls += 1;
            ExecutionResult::ok("get_inventory", "", Default::default())
        };
        let opts = DecomposeOptions {
            budget: 3,
            ..DecomposeOptions::default()
        };
        match decompose(&req(), "i1", &backend, "s", &opts, &mut exec) {
            Err(PipelineError::StepBudgetExceeded { budget: 3, tree }) => assert_eq!(tree.len(), 3),
            other => panic!("{other:?}"),
        }
        assert_eq!(calls, 3);
    }

    #[test]
    fn unknown_keys_are_flagged() {
        let backend = ScriptedBackend::new([
            r#"{"action":"get","resource":"inventory","zone":"Domain1","colour":"blue"}"#,
            "END",
        ]);
        let mut exec = |_: &Policy, _: &PolicyMetadata| ExecutionResult::ok("get_inventory", "", Default::default());
        let tree = decompose(&req(), "i1", &backend, "s", &DecomposeOptions::default(), &mut exec).unwrap();
        assert_eq!(
            tree.nodes[0].warnings,
            [Warning::UnknownConstraintKey { key: "colour".into() }]
        );
    }
}
