//! The user-facing gateway: configuration, prompt templates, persistence,
//! the engine and the demo scenarios.

use thiserror::Error;

use crate::assurance::AssuranceError;
use crate::llm::LlmError;
use crate::pipeline::PipelineError;
use crate::twin::TwinError;

pub mod config;
pub mod demo;
pub mod engine;
pub mod persist;
pub mod prompts;

pub use config::{BackendSelection, EngineConfig};
pub use demo::{run_demo, DemoReport, Scenario, USE_CASE};
pub use engine::{AssuranceOutcome, Engine, SubmitOptions, TickSummary};
pub use persist::{parse_journal, Store, TWIN_FILE};
pub use prompts::{PromptTemplate, PromptTemplateSet};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("config: {0}")]
    Config(String),
    #[error("persistence: {0}")]
    Persistence(String),
    #[error("corrupt record {file} line {line}: {reason}")]
    CorruptRecord {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("backend: {0}")]
    Backend(LlmError),
    #[error(transparent)]
    Pipeline(PipelineError),
    #[error(transparent)]
    Assurance(AssuranceError),
    #[error(transparent)]
    Twin(#[from] TwinError),
    #[error("unknown intent {0}")]
    UnknownIntent(String),
    #[error("scenario {scenario}: {detail}")]
    ScenarioMismatch { scenario: String, detail: String },
}

impl From<PipelineError> for GatewayError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Backend(b) => GatewayError::Backend(b),
            other => GatewayError::Pipeline(other),
        }
    }
}

impl From<AssuranceError> for GatewayError {
    fn from(e: AssuranceError) -> Self {
        match e {
            AssuranceError::Pipeline(p) => p.into(),
            other => GatewayError::Assurance(other),
        }
    }
}

impl GatewayError {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            GatewayError::Config(_) => 2,
            GatewayError::ScenarioMismatch { .. } => 3,
            GatewayError::Backend(_) => 4,
            _ => 1,
        }
    }
}
