//! Application management: turns health reports into drift events and
//! drives assurance decompositions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{goal_predicate, FeedbackMode, IntentRecord};
use crate::oracle::{DriftInfo, RunKind};
use crate::pipeline::{Pipeline, PipelineError, PolicyTree, Terminal};
use crate::twin::{HealthReport, TwinState, VmState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriftEvent {
    pub intent_id: String,
    /// Drifted VM.
    pub target: String,
    pub role: String,
    pub expected: VmState,
    pub observed: VmState,
    pub detected_at: u64,
    pub open: bool,
    /// Assurance runs started for this event.
    pub runs: u32,
    pub queued_for_human: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_at: Option<u64>,
}

impl DriftEvent {
    pub fn key(&self) -> String {
        format!("{}/{}/{}", self.intent_id, self.target, self.observed)
    }

    pub fn info(&self) -> DriftInfo {
        DriftInfo {
            role: self.role.clone(),
            vm_id: self.target.clone(),
            observed: self.observed.to_string(),
            expected: self.expected.to_string(),
        }
    }

    pub fn message(&self) -> String {
        self.info().message()
    }
}

#[derive(Debug, Error)]
pub enum AssuranceError {
    #[error("no intent owns notification sink(s) {0:?}")]
    UnknownSink(Vec<String>),
    #[error("intent {0} does not grant autonomic permission; drift queued for a human")]
    PermissionDenied(String),
    #[error("drift event {0} is not open")]
    NotOpen(String),
    #[error("drift event {0} already had its assurance run")]
    AlreadyRun(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// A new drift event: which record and which of its drifts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DriftRef {
    pub record: usize,
    pub drift: usize,
}

/// Compares a report against the intents owning `sinks`. Opens one event
/// per drifted VM not already covered by an open event with the same key,
/// and closes open events of intents whose goal holds again.
pub fn on_health_report(
    report: &HealthReport,
    sinks: &[String],
    records: &mut [IntentRecord],
    twin: &TwinState,
) -> Result<Vec<DriftRef>, AssuranceError> {
    let owners: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.knowledge.sinks.iter().any(|s| sinks.contains(s)))
        .map(|(i, _)| i)
        .collect();
    if owners.is_empty() {
        return Err(AssuranceError::UnknownSink(sinks.to_vec()));
    }
    let mut fresh = Vec::new();
    for ri in owners {
        let rec = &mut records[ri];
        for (vm, state) in &report.states {
            let Some(role) = rec.knowledge.role_of(vm).map(String::from) else {
                continue;
            };
            if *state == VmState::Running {
                continue;
            }
            let event = DriftEvent {
                intent_id: rec.id.clone(),
                target: vm.clone(),
                role,
                expected: VmState::Running,
                observed: *state,
                detected_at: report.tick,
                open: true,
                runs: 0,
                queued_for_human: false,
                closed_at: None,
            };
            let key = event.key();
            if rec.drifts.iter().any(|d| d.open && d.key() == key) {
                continue;
            }
            log::info!("{}: {}", rec.id, event.message());
            let drift = rec.open_drift(event);
            fresh.push(DriftRef { record: ri, drift });
        }
        if goal_predicate(&rec.types, &rec.knowledge, twin).holds() {
            for i in 0..rec.drifts.len() {
                if rec.drifts[i].open {
                    rec.update_drift(i, |d| {
                        d.open = false;
                        d.closed_at = Some(report.tick);
                    });
                }
            }
        }
        rec.refresh_status(twin);
    }
    Ok(fresh)
}

/// Repairs drift `index` of `record`. If the tree ends in ERROR under
/// boolean feedback, one more attempt runs with detailed feedback. Returns
/// the trees produced, in order.
pub fn assure(
    pipeline: &Pipeline<'_>,
    record: &mut IntentRecord,
    index: usize,
    feedback_mode: FeedbackMode,
) -> Result<Vec<PolicyTree>, AssuranceError> {
    let event = record.drifts[index].clone();
    if !event.open {
        return Err(AssuranceError::NotOpen(event.key()));
    }
    if event.runs > 0 {
        return Err(AssuranceError::AlreadyRun(event.key()));
    }
    if !record.autonomic_permission {
        record.update_drift(index, |d| d.queued_for_human = true);
        return Err(AssuranceError::PermissionDenied(record.id.clone()));
    }
    record.update_drift(index, |d| d.runs += 1);
    let message = event.message();
    let mut trees = Vec::new();
    let first = pipeline.decompose(record, RunKind::Assurance, Some(message.clone()), feedback_mode)?;
    let retry = first.terminal == Terminal::Error && feedback_mode == FeedbackMode::Boolean;
    trees.push(first);
    if retry {
        log::warn!("{}: assurance ended in ERROR, retrying with detailed feedback", record.id);
        trees.push(pipeline.decompose(
            record,
            RunKind::Assurance,
            Some(message),
            FeedbackMode::Detailed,
        )?);
    }
    Ok(trees)
}
