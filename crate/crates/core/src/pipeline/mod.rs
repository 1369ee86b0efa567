//! The three-stage pipeline: classification, progressive decomposition with
//! execution feedback, and policy-tree validation, plus twin rehearsal.

mod classify;
mod decompose;
mod rehearse;
mod run;
pub mod tree;
mod validate;

use thiserror::Error;

use crate::llm::LlmError;

pub use classify::{classify, parse_type_list, Classification};
pub use decompose::{decompose, DecomposeOptions};
pub use rehearse::{twin_rehearse, RehearsalOutcome};
pub use run::{Pipeline, PipelineSettings};
pub use tree::{PolicyTree, Terminal, TreeNode, Warning};
pub use validate::{
    correct_tree, rule_check, validate_tree, Finding, FindingCategory, ValidationReport,
    FINDING_PREFIX,
};

pub const DEFAULT_STEP_BUDGET: usize = 32;
pub const MAX_REPROMPTS: u32 = 2;
pub const REPROMPT_MESSAGE: &str = "Output only the policy JSON.";

/// Per-stage system prompts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePrompts {
    pub classify: String,
    pub decompose: String,
    pub validate: String,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no supported intent type recognized in {0:?}")]
    ClassificationEmpty(String),
    #[error("step budget of {budget} policies exceeded")]
    StepBudgetExceeded { budget: usize, tree: Box<PolicyTree> },
    #[error(transparent)]
    Backend(#[from] LlmError),
}
