//! The engine: one twin, one backend and the intents submitted to it.

use std::time::Instant;

use serde::Serialize;

use crate::assurance::{assure, on_health_report, AssuranceError, DriftEvent};
use crate::executor::{FeedbackMode, IntentRecord, IntentStatus, MappingTable};
use crate::llm::{
    Backend, LiveBackend, LlmError, OracleBackend, RecordingBackend, ReplayBackend, Transcript,
};
use crate::oracle::Oracle;
use crate::pipeline::{Pipeline, PipelineSettings, StagePrompts};
use crate::twin::{FaultSpec, TwinEvent, TwinHandle, TwinState};

use super::config::{BackendSelection, EngineConfig};
use super::persist::Store;
use super::prompts::PromptTemplateSet;
use super::GatewayError;

enum BackendSlot {
    Plain(Box<dyn Backend>),
    Recording(RecordingBackend),
}

impl BackendSlot {
    fn get(&self) -> &dyn Backend {
        match self {
            BackendSlot::Plain(b) => b.as_ref(),
            BackendSlot::Recording(r) => r,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SubmitOptions {
    pub definer: Option<String>,
    pub autonomic_permission: Option<bool>,
    pub feedback_mode: Option<FeedbackMode>,
}

/// What happened to one drift event during a tick.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AssuranceOutcome {
    pub intent_id: String,
    pub drift: String,
    pub message: String,
    /// Policy count of each assurance tree produced.
    pub trees: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TickSummary {
    pub clock: u64,
    pub reports: usize,
    pub dropped_reports: usize,
    pub expired_reservations: Vec<String>,
    pub assurance: Vec<AssuranceOutcome>,
}

pub struct Engine {
    config: EngineConfig,
    twin: TwinHandle,
    backend: BackendSlot,
    prompts: StagePrompts,
    mapping: MappingTable,
    oracle: Oracle,
    records: Vec<IntentRecord>,
    store: Option<Store>,
    assurance_mode: FeedbackMode,
}

fn build_backend(cfg: &EngineConfig, oracle: &Oracle) -> Result<BackendSlot, GatewayError> {
    let inner: Box<dyn Backend> = match &cfg.backend {
        BackendSelection::Oracle => Box::new(OracleBackend::new(oracle.clone())),
        BackendSelection::Live => Box::new(LiveBackend::new(cfg.live_settings())),
        BackendSelection::Replay(path) => {
            Box::new(ReplayBackend::load(path).map_err(|e| GatewayError::Config(e.to_string()))?)
        }
    };
    Ok(if cfg.record_transcript.is_some() {
        BackendSlot::Recording(RecordingBackend::new(inner))
    } else {
        BackendSlot::Plain(inner)
    })
}

impl Engine {
    /// Builds an engine, resuming from the persistence directory when it
    /// holds earlier state.
    pub fn new(config: EngineConfig) -> Result<Self, GatewayError> {
        Self::build(config, true)
    }

    /// Builds an engine on a fresh twin, ignoring persisted state.
    pub fn fresh(config: EngineConfig) -> Result<Self, GatewayError> {
        Self::build(config, false)
    }

    fn build(config: EngineConfig, resume: bool) -> Result<Self, GatewayError> {
        config.check()?;
        let prompts = match &config.prompt_dir {
            Some(dir) => PromptTemplateSet::load(dir)?,
            None => PromptTemplateSet::builtin(),
        }
        .stage_prompts();
        let oracle = Oracle::new(Default::default(), config.lexicon()?, config.plan_settings());
        let backend = build_backend(&config, &oracle)?;
        let mut twin = TwinState::new(config.twin_config()?);
        let mut records = Vec::new();
        let store = match &config.persistence_dir {
            Some(dir) => {
                let mut store = Store::open(dir)?;
                if resume {
                    if let Some(saved) = store.load_twin()? {
                        twin = saved;
                    }
                    records = store.load_all()?;
                }
                Some(store)
            }
            None => None,
        };
        Ok(Self {
            assurance_mode: config.assurance_mode(),
            config,
            twin: TwinHandle::new(twin),
            backend,
            prompts,
            mapping: MappingTable::default(),
            oracle,
            records,
            store,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn twin(&self) -> &TwinHandle {
        &self.twin
    }

    pub fn records(&self) -> &[IntentRecord] {
        &self.records
    }

    pub fn record(&self, id: &str) -> Option<&IntentRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn backend_name(&self) -> &str {
        self.backend.get().name()
    }

    pub fn set_assurance_mode(&mut self, mode: FeedbackMode) {
        self.assurance_mode = mode;
    }

    pub fn drifts(&self) -> impl Iterator<Item = &DriftEvent> {
        self.records.iter().flat_map(|r| r.drifts.iter())
    }

    /// Exchanges recorded so far, when recording is on.
    pub fn transcript(&self) -> Option<Transcript> {
        match &self.backend {
            BackendSlot::Recording(r) => Some(r.transcript()),
            BackendSlot::Plain(_) => None,
        }
    }

    fn pipeline(&self) -> Pipeline<'_> {
        Pipeline {
            backend: self.backend.get(),
            prompts: &self.prompts,
            mapping: &self.mapping,
            twin: &self.twin,
            oracle: &self.oracle,
            settings: PipelineSettings {
                budget: self.config.step_budget,
                seed: self.config.seed,
            },
        }
    }

    fn next_id(&self) -> String {
        let n = self
            .records
            .iter()
            .filter_map(|r| r.id.strip_prefix("intent-")?.parse::<u64>().ok())
            .max()
            .unwrap_or(0);
        format!("intent-{}", n + 1)
    }

    /// Classifies, decomposes, validates and rehearses an intent. The record
    /// is kept even when fulfillment fails.
    pub fn submit(&mut self, text: &str, opts: &SubmitOptions) -> Result<String, GatewayError> {
        let started = Instant::now();
        let classification = self.pipeline().classify(text)?;
        let id = self.next_id();
        let mut record = IntentRecord::new(
            &id,
            text.trim(),
            opts.definer.as_deref().unwrap_or(&self.config.definer),
            classification.types,
            opts.autonomic_permission.unwrap_or(self.config.autonomic_permission),
            opts.feedback_mode.unwrap_or(self.config.feedback_mode),
        );
        let result = self.pipeline().fulfill(&mut record);
        self.records.push(record);
        self.save()?;
        result?;
        log::info!("{id} fulfilled in {:?}", started.elapsed());
        Ok(id)
    }

    pub fn inject(&mut self, spec: &FaultSpec) -> Result<(), GatewayError> {
        self.twin.submit(|s| s.inject_fault(spec))?;
        self.save()
    }

    /// Advances the clock one tick at a time, handling health reports and
    /// running assurance for new drift events as they appear.
    pub fn tick(&mut self, n: u64) -> Result<TickSummary, GatewayError> {
        let mut summary = TickSummary::default();
        for _ in 0..n {
            for event in self.twin.submit(|s| s.tick(1)) {
                match event {
                    TwinEvent::HealthReport { report, sinks } => {
                        summary.reports += 1;
                        self.handle_report(&report, &sinks, &mut summary)?;
                    }
                    TwinEvent::ReportDropped { .. } => summary.dropped_reports += 1,
                    TwinEvent::ReservationExpired { id, .. } => summary.expired_reservations.push(id),
                    TwinEvent::VmReady { .. } => {}
                }
            }
        }
        summary.clock = self.twin.lock().clock();
        let snapshot = self.twin.snapshot();
        for r in &mut self.records {
            r.refresh_status(&snapshot);
        }
        self.save()?;
        Ok(summary)
    }

    fn handle_report(
        &mut self,
        report: &crate::twin::HealthReport,
        sinks: &[String],
        summary: &mut TickSummary,
    ) -> Result<(), GatewayError> {
        let snapshot = self.twin.snapshot();
        let fresh = match on_health_report(report, sinks, &mut self.records, &snapshot) {
            Ok(f) => f,
            Err(AssuranceError::UnknownSink(s)) => {
                log::warn!("health report {} for unowned sinks {s:?}", report.check_id);
                return Ok(());
            }
            Err(e) => return Err(e.into()),
        };
        for d in fresh {
            let mut record = self.records[d.record].clone();
            let event = record.drifts[d.drift].clone();
            let result = assure(&self.pipeline(), &mut record, d.drift, self.assurance_mode);
            let (trees, error) = match result {
                Ok(trees) => (trees.iter().map(|t| t.len()).collect(), None),
                Err(AssuranceError::Pipeline(crate::pipeline::PipelineError::Backend(e))) => {
                    self.records[d.record] = record;
                    return Err(GatewayError::Backend(e));
                }
                Err(e) => (Vec::new(), Some(e.to_string())),
            };
            self.records[d.record] = record;
            summary.assurance.push(AssuranceOutcome {
                intent_id: event.intent_id.clone(),
                drift: event.key(),
                message: event.message(),
                trees,
                error,
            });
        }
        Ok(())
    }

    pub fn status(&self, id: &str) -> Result<IntentStatus, GatewayError> {
        self.record(id)
            .map(IntentRecord::status)
            .ok_or_else(|| GatewayError::UnknownIntent(id.to_string()))
    }

    /// Writes journals, the twin snapshot and the transcript, if configured.
    pub fn save(&mut self) -> Result<(), GatewayError> {
        if let Some(store) = &mut self.store {
            for r in &self.records {
                store.persist(r)?;
            }
            store.save_twin(&self.twin.snapshot())?;
        }
        if let (Some(path), Some(t)) = (&self.config.record_transcript, self.transcript()) {
            t.save(path).map_err(GatewayError::Backend)?;
        }
        Ok(())
    }
}

impl From<LlmError> for GatewayError {
    fn from(e: LlmError) -> Self {
        GatewayError::Backend(e)
    }
}
