//! A pipeline bound to a backend, prompts and the shared twin.

use crate::executor::{Executor, FeedbackMode, IntentRecord, MappingTable};
use crate::llm::Backend;
use crate::oracle::{DecompositionRequest, Oracle, RunKind};
use crate::twin::TwinHandle;

use super::classify::{classify, Classification};
use super::decompose::{decompose, DecomposeOptions};
use super::rehearse::{twin_rehearse, RehearsalOutcome};
use super::tree::{PolicyTree, Terminal};
use super::validate::validate_tree;
use super::{PipelineError, StagePrompts, DEFAULT_STEP_BUDGET};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineSettings {
    pub budget: usize,
    pub seed: u64,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            budget: DEFAULT_STEP_BUDGET,
            seed: 0,
        }
    }
}

pub struct Pipeline<'a> {
    pub backend: &'a dyn Backend,
    pub prompts: &'a StagePrompts,
    pub mapping: &'a MappingTable,
    pub twin: &'a TwinHandle,
    /// Supplies entity extraction for validator fill-in and plan settings.
    pub oracle: &'a Oracle,
    pub settings: PipelineSettings,
}

impl Pipeline<'_> {
    pub fn classify(&self, text: &str) -> Result<Classification, PipelineError> {
        classify(text, self.backend, &self.prompts.classify)
    }

    /// Runs stage 2 for `record`, executing against the twin with the
    /// record's knowledge, and attaches the resulting tree.
    pub fn decompose(
        &self,
        record: &mut IntentRecord,
        mode: RunKind,
        drift: Option<String>,
        feedback_mode: FeedbackMode,
    ) -> Result<PolicyTree, PipelineError> {
        let mut k = record.knowledge.clone();
        k.run = mode;
        k.feedback_mode = feedback_mode;
        let req = DecompositionRequest {
            text: record.text.clone(),
            types: record.types.clone(),
            mode,
            drift,
        };
        let opts = DecomposeOptions {
            budget: self.settings.budget,
            feedback_mode,
            seed: self.settings.seed,
            first_index: record.policy_count(),
            definer: record.definer.clone(),
            autonomic_permission: record.autonomic_permission,
            ..DecomposeOptions::default()
        };
        let result = {
            let mut exec = |p: &_, meta: &_| {
                Executor::new(self.twin, self.mapping, &mut k).execute_policy(p, Some(meta))
            };
            decompose(
                &req,
                &record.id,
                self.backend,
                &self.prompts.decompose,
                &opts,
                &mut exec,
            )
        };
        record.set_knowledge(k);
        let outcome = match result {
            Ok(tree) => Ok(tree),
            Err(PipelineError::StepBudgetExceeded { budget, mut tree }) => {
                tree.terminal = Terminal::Error;
                tree.error = Some(format!("step budget of {budget} policies exceeded"));
                record.attach_tree((*tree).clone());
                record.refresh_status(&self.twin.snapshot());
                return Err(PipelineError::StepBudgetExceeded { budget, tree });
            }
            Err(e) => Err(e),
        }?;
        record.attach_tree(outcome.clone());
        record.refresh_status(&self.twin.snapshot());
        Ok(outcome)
    }

    /// Fulfillment: decompose, validate, then rehearse the accepted or
    /// corrected tree on a copy of the twin as it was before the run.
    pub fn fulfill(&self, record: &mut IntentRecord) -> Result<PolicyTree, PipelineError> {
        let baseline = self.twin.snapshot();
        let seed_k = record.knowledge.clone();
        let tree = self.decompose(record, RunKind::Fulfillment, None, record.feedback_mode)?;
        let entities = self.oracle.extract(&record.text).ok();
        let report = validate_tree(
            &record.text,
            &record.types,
            &tree,
            self.backend,
            &self.prompts.validate,
            self.mapping,
            entities.as_ref(),
            &self.oracle.settings,
        )?;
        let candidate = if report.accepted() {
            Some(&tree)
        } else {
            report.corrected.as_ref()
        };
        let rehearsal = match candidate {
            Some(t) => twin_rehearse(&record.types, t, &baseline, &seed_k, self.mapping),
            None => RehearsalOutcome {
                passed: false,
                failed_at: None,
                violations: Vec::new(),
                detail: "not rehearsed: validation findings need re-decomposition".into(),
            },
        };
        if !rehearsal.passed {
            log::warn!("{}: rehearsal failed: {}", record.id, rehearsal.detail);
        }
        record.set_validation(report);
        record.set_rehearsal(rehearsal);
        record.refresh_status(&self.twin.snapshot());
        Ok(tree)
    }
}
