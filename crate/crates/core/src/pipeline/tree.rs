//! Policy trees: the executed policy sequence of one decomposition run.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::executor::{ExecutionResult, FeedbackMode, RunKind};
use crate::policy::{parse_policy, MapeStage, Policy, PolicyError, PolicyMetadata};
use crate::twin::Size;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Terminal {
    #[serde(rename = "END")]
    End,
    #[serde(rename = "ERROR")]
    Error,
    #[default]
    #[serde(rename = "in-progress")]
    InProgress,
}

impl Terminal {
    pub fn as_str(self) -> &'static str {
        match self {
            Terminal::End => "END",
            Terminal::Error => "ERROR",
            Terminal::InProgress => "in-progress",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "warning", rename_all = "kebab-case")]
pub enum Warning {
    UnknownConstraintKey { key: String },
    Relaxed { from: Size, to: Size },
    Reprompted { attempts: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub index: usize,
    /// Policy in wire form, exactly as it was executed.
    pub policy: String,
    pub stage: MapeStage,
    pub metadata: PolicyMetadata,
    pub result: Option<ExecutionResult>,
    /// Feedback line returned to the backend.
    pub feedback: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<Warning>,
    /// Logical sequence numbers: when the policy was received and when its
    /// result was recorded.
    pub requested_at: u64,
    pub recorded_at: u64,
}

impl TreeNode {
    pub fn parsed(&self) -> Result<Policy, PolicyError> {
        parse_policy(&self.policy)
    }

    pub fn succeeded(&self) -> bool {
        self.result.as_ref().is_some_and(|r| r.success)
    }

    pub fn is_relaxed(&self) -> bool {
        self.warnings
            .iter()
            .any(|w| matches!(w, Warning::Relaxed { .. }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyTree {
    pub intent_id: String,
    pub kind: RunKind,
    pub feedback_mode: FeedbackMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<String>,
    pub nodes: Vec<TreeNode>,
    pub terminal: Terminal,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PolicyTree {
    pub fn new(intent_id: &str, kind: RunKind, feedback_mode: FeedbackMode) -> Self {
        Self {
            intent_id: intent_id.to_string(),
            kind,
            feedback_mode,
            drift: None,
            nodes: Vec::new(),
            terminal: Terminal::InProgress,
            error: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Every node's result was recorded before the next node was requested.
    pub fn is_progressive(&self) -> bool {
        self.nodes.iter().all(|n| n.result.is_some() && n.requested_at < n.recorded_at)
            && self
                .nodes
                .windows(2)
                .all(|w| w[0].recorded_at < w[1].requested_at)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trees serialize")
    }

    /// Human-readable listing.
    pub fn render(&self) -> String {
        let mut out = format!(
            "{} tree for {}: {} policies, {}, feedback {}\n",
            self.kind,
            self.intent_id,
            self.len(),
            self.terminal.as_str(),
            self.feedback_mode
        );
        if let Some(d) = &self.drift {
            let _ = writeln!(out, "  drift: {d}");
        }
        for n in &self.nodes {
            let _ = write!(out, "  {:>2}. [{}] {}  -> {}", n.index + 1, n.stage, n.policy, n.feedback);
            for w in &n.warnings {
                match w {
                    Warning::Relaxed { from, to } => {
                        let _ = write!(out, "  (relaxed {from} -> {to})");
                    }
                    Warning::UnknownConstraintKey { key } => {
                        let _ = write!(out, "  (unknown key {key})");
                    }
                    Warning::Reprompted { attempts } => {
                        let _ = write!(out, "  (re-prompted {attempts}x)");
                    }
                }
            }
            out.push('\n');
        }
        match &self.error {
            Some(e) => {
                let _ = writeln!(out, "  {} ({e})", self.terminal.as_str());
            }
            None => {
                let _ = writeln!(out, "  {}", self.terminal.as_str());
            }
        }
        out
    }
}
