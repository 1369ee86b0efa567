//! Intent records and their append-only journal.
//!
//! Every mutation of a record goes through a method that also appends a
//! journal entry, so replaying the journal rebuilds the record exactly.

use serde::{Deserialize, Serialize};

use crate::assurance::DriftEvent;
use crate::oracle::IntentType;
use crate::pipeline::{PolicyTree, RehearsalOutcome, Terminal, TreeNode, ValidationReport};
use crate::twin::TwinState;

use super::feedback::FeedbackMode;
use super::goal::goal_predicate;
use super::knowledge::{KnowledgeStore, RunKind};

pub const JOURNAL_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntentStatus {
    #[default]
    Pending,
    Fulfilled,
    Degraded,
    Failed,
}

impl std::fmt::Display for IntentStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            IntentStatus::Pending => "pending",
            IntentStatus::Fulfilled => "fulfilled",
            IntentStatus::Degraded => "degraded",
            IntentStatus::Failed => "failed",
        })
    }
}

/// One line of an intent's persistence file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "kebab-case", deny_unknown_fields)]
pub enum JournalEntry {
    Header {
        schema: u32,
        id: String,
        text: String,
        definer: String,
        types: Vec<IntentType>,
        autonomic_permission: bool,
        feedback_mode: FeedbackMode,
    },
    /// Opens a tree; the nodes and terminal that follow belong to it.
    Tree {
        kind: RunKind,
        feedback_mode: FeedbackMode,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        drift: Option<String>,
    },
    Node {
        node: TreeNode,
    },
    Terminal {
        terminal: Terminal,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Knowledge {
        knowledge: KnowledgeStore,
    },
    Validation {
        report: ValidationReport,
    },
    Rehearsal {
        outcome: RehearsalOutcome,
    },
    Drift {
        index: usize,
        event: DriftEvent,
    },
    Status {
        status: IntentStatus,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum JournalError {
    #[error("journal is empty")]
    Empty,
    #[error("entry {0}: expected a header first")]
    MissingHeader(usize),
    #[error("entry {0}: unsupported schema {1}")]
    Schema(usize, u32),
    #[error("entry {0}: {1}")]
    OutOfPlace(usize, &'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IntentRecord {
    pub id: String,
    pub text: String,
    pub definer: String,
    pub types: Vec<IntentType>,
    pub autonomic_permission: bool,
    pub feedback_mode: FeedbackMode,
    pub fulfillment: Option<PolicyTree>,
    pub assurance: Vec<PolicyTree>,
    pub knowledge: KnowledgeStore,
    pub drifts: Vec<DriftEvent>,
    pub validation: Option<ValidationReport>,
    pub rehearsal: Option<RehearsalOutcome>,
    status: IntentStatus,
    #[serde(skip)]
    journal: Vec<JournalEntry>,
}

impl IntentRecord {
    pub fn new(
        id: &str,
        text: &str,
        definer: &str,
        types: Vec<IntentType>,
        autonomic_permission: bool,
        feedback_mode: FeedbackMode,
    ) -> Self {
        let header = JournalEntry::Header {
            schema: JOURNAL_SCHEMA,
            id: id.to_string(),
            text: text.to_string(),
            definer: definer.to_string(),
            types: types.clone(),
            autonomic_permission,
            feedback_mode,
        };
        Self {
            id: id.to_string(),
            text: text.to_string(),
            definer: definer.to_string(),
            types,
            autonomic_permission,
            feedback_mode,
            fulfillment: None,
            assurance: Vec::new(),
            knowledge: KnowledgeStore::new(feedback_mode),
            drifts: Vec::new(),
            validation: None,
            rehearsal: None,
            status: IntentStatus::Pending,
            journal: vec![header],
        }
    }

    pub fn status(&self) -> IntentStatus {
        self.status
    }

    pub fn journal(&self) -> &[JournalEntry] {
        &self.journal
    }

    /// The most recent tree, assurance first.
    pub fn latest_tree(&self) -> Option<&PolicyTree> {
        self.assurance.last().or(self.fulfillment.as_ref())
    }

    pub fn trees(&self) -> impl Iterator<Item = &PolicyTree> {
        self.fulfillment.iter().chain(self.assurance.iter())
    }

    /// Total policies across all trees; the next policy index.
    pub fn policy_count(&self) -> usize {
        self.trees().map(PolicyTree::len).sum()
    }

    pub fn attach_tree(&mut self, tree: PolicyTree) {
        self.journal.push(JournalEntry::Tree {
            kind: tree.kind,
            feedback_mode: tree.feedback_mode,
            drift: tree.drift.clone(),
        });
        for n in &tree.nodes {
            self.journal.push(JournalEntry::Node { node: n.clone() });
        }
        self.journal.push(JournalEntry::Terminal {
            terminal: tree.terminal,
            error: tree.error.clone(),
        });
        match tree.kind {
            RunKind::Fulfillment => self.fulfillment = Some(tree),
            RunKind::Assurance => self.assurance.push(tree),
        }
    }

    pub fn set_knowledge(&mut self, k: KnowledgeStore) {
        if k != self.knowledge {
            self.knowledge = k;
            self.journal.push(JournalEntry::Knowledge {
                knowledge: self.knowledge.clone(),
            });
        }
    }

    pub fn set_validation(&mut self, report: ValidationReport) {
        self.journal.push(JournalEntry::Validation {
            report: report.clone(),
        });
        self.validation = Some(report);
    }

    pub fn set_rehearsal(&mut self, outcome: RehearsalOutcome) {
        self.journal.push(JournalEntry::Rehearsal {
            outcome: outcome.clone(),
        });
        self.rehearsal = Some(outcome);
    }

    /// Adds a drift event and returns its index.
    pub fn open_drift(&mut self, event: DriftEvent) -> usize {
        let index = self.drifts.len();
        self.drifts.push(event);
        self.journal_drift(index);
        index
    }

    /// Applies `f` to drift `index` and journals the new state.
    pub fn update_drift(&mut self, index: usize, f: impl FnOnce(&mut DriftEvent)) {
        if let Some(ev) = self.drifts.get_mut(index) {
            let before = ev.clone();
            f(ev);
            if *ev != before {
                self.journal_drift(index);
            }
        }
    }

    fn journal_drift(&mut self, index: usize) {
        self.journal.push(JournalEntry::Drift {
            index,
            event: self.drifts[index].clone(),
        });
    }

    /// Derives the status from the trees and the goal predicate.
    pub fn refresh_status(&mut self, twin: &TwinState) -> IntentStatus {
        let status = match (&self.fulfillment, self.latest_tree()) {
            (None, _) | (_, None) => IntentStatus::Pending,
            (Some(f), _) if f.terminal == Terminal::Error => IntentStatus::Failed,
            (_, Some(t)) if t.terminal == Terminal::InProgress => IntentStatus::Pending,
            (_, Some(t)) => {
                let holds = goal_predicate(&self.types, &self.knowledge, twin).holds();
                if t.terminal == Terminal::End && holds {
                    IntentStatus::Fulfilled
                } else {
                    IntentStatus::Degraded
                }
            }
        };
        if status != self.status {
            self.status = status;
            self.journal.push(JournalEntry::Status { status });
        }
        status
    }

    /// Rebuilds a record by replaying its journal.
    pub fn from_journal(entries: Vec<JournalEntry>) -> Result<Self, JournalError> {
        let mut it = entries.into_iter().enumerate();
        let mut rec = match it.next() {
            None => return Err(JournalError::Empty),
            Some((
                _,
                JournalEntry::Header {
                    schema,
                    id,
                    text,
                    definer,
                    types,
                    autonomic_permission,
                    feedback_mode,
                },
            )) => {
                if schema != JOURNAL_SCHEMA {
                    return Err(JournalError::Schema(0, schema));
                }
                IntentRecord::new(&id, &text, &definer, types, autonomic_permission, feedback_mode)
            }
            Some(_) => return Err(JournalError::MissingHeader(0)),
        };
        let mut open: Option<PolicyTree> = None;
        for (i, entry) in it {
            match entry {
                JournalEntry::Header { .. } => {
                    return Err(JournalError::OutOfPlace(i, "second header"))
                }
                JournalEntry::Tree {
                    kind,
                    feedback_mode,
                    drift,
                } => {
                    if open.is_some() {
                        return Err(JournalError::OutOfPlace(i, "tree opened inside a tree"));
                    }
                    let mut t = PolicyTree::new(&rec.id, kind, feedback_mode);
                    t.drift = drift;
                    open = Some(t);
                }
                JournalEntry::Node { node } => match open.as_mut() {
                    Some(t) => t.nodes.push(node),
                    None => return Err(JournalError::OutOfPlace(i, "node outside a tree")),
                },
                JournalEntry::Terminal { terminal, error } => {
                    let Some(mut t) = open.take() else {
                        return Err(JournalError::OutOfPlace(i, "terminal outside a tree"));
                    };
                    t.terminal = terminal;
                    t.error = error;
                    rec.attach_tree(t);
                }
                JournalEntry::Knowledge { knowledge } => rec.set_knowledge(knowledge),
                JournalEntry::Validation { report } => rec.set_validation(report),
                JournalEntry::Rehearsal { outcome } => rec.set_rehearsal(outcome),
                JournalEntry::Drift { index, event } => {
                    if index == rec.drifts.len() {
                        rec.open_drift(event);
                    } else if index < rec.drifts.len() {
                        rec.update_drift(index, |e| *e = event);
                    } else {
                        return Err(JournalError::OutOfPlace(i, "drift index skips ahead"));
                    }
                }
                JournalEntry::Status { status } => {
                    rec.status = status;
                    rec.journal.push(JournalEntry::Status { status });
                }
            }
        }
        if open.is_some() {
            return Err(JournalError::OutOfPlace(usize::MAX, "unterminated tree"));
        }
        Ok(rec)
    }
}
