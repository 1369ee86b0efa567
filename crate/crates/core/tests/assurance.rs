use intent_core::assurance::{assure, on_health_report, AssuranceError};
use intent_core::executor::{FeedbackMode, IntentRecord, MappingTable};
use intent_core::gateway::USE_CASE;
use intent_core::llm::{OracleBackend, ScriptedBackend};
use intent_core::oracle::{Oracle, RunKind};
use intent_core::pipeline::{Pipeline, PipelineSettings, StagePrompts, Terminal};
use intent_core::twin::{HealthReport, TwinConfig, TwinHandle, TwinState, VmCommand, VmState};

struct World {
    twin: TwinHandle,
    prompts: StagePrompts,
    mapping: MappingTable,
    oracle: Oracle,
}

impl World {
    fn new() -> Self {
        Self {
            twin: TwinHandle::new(TwinState::new(TwinConfig::default())),
            prompts: StagePrompts::default(),
            mapping: MappingTable::default(),
            oracle: Oracle::default(),
        }
    }

    fn pipeline<'a>(&'a self, backend: &'a dyn intent_core::llm::Backend) -> Pipeline<'a> {
        Pipeline {
            backend,
            prompts: &self.prompts,
            mapping: &self.mapping,
            twin: &self.twin,
            oracle: &self.oracle,
            settings: PipelineSettings::default(),
        }
    }

    fn fulfilled(&self, permission: bool) -> IntentRecord {
        let oracle = OracleBackend::default();
        let p = self.pipeline(&oracle);
        let types = p.classify(USE_CASE).unwrap().types;
        let mut rec = IntentRecord::new("intent-1", USE_CASE, "Administrator", types, permission, FeedbackMode::Boolean);
        p.fulfill(&mut rec).unwrap();
        rec
    }

    /// Shuts `vm` down and delivers one report covering it.
    fn report(&self, rec: &IntentRecord, vm: &str, tick: u64) -> HealthReport {
        let _ = self.twin.submit(|s| s.vm_command(vm, VmCommand::Stop));
        let mut states = indexmap::IndexMap::new();
        for v in rec.knowledge.bound_vms() {
            let st = self.twin.lock().vm(&v).unwrap().state;
            states.insert(v, st);
        }
        HealthReport {
            check_id: rec.knowledge.checks[0].clone(),
            tick,
            states,
        }
    }
}

#[test]
fn error_in_boolean_mode_retries_once_with_detailed() {
    let w = World::new();
    let mut records = vec![w.fulfilled(true)];
    let dpi = records[0].knowledge.vms_for_role("dpi")[0].clone();
    let report = w.report(&records[0], &dpi, 5);
    let sinks = records[0].knowledge.sinks.clone();
    let snapshot = w.twin.snapshot();
    let fresh = on_health_report(&report, &sinks, &mut records, &snapshot).unwrap();
    assert_eq!(fresh.len(), 1);

    let start = format!(r#"{{"action":"start","resource":"vm","target":"{dpi}"}}"#);
    let backend = ScriptedBackend::new(["ERROR".to_string(), start, "END".into()]);
    let trees = assure(&w.pipeline(&backend), &mut records[0], fresh[0].drift, FeedbackMode::Boolean).unwrap();
    assert_eq!(trees.len(), 2);
    assert_eq!(trees[0].terminal, Terminal::Error);
    assert_eq!(trees[0].feedback_mode, FeedbackMode::Boolean);
    assert_eq!(trees[1].terminal, Terminal::End);
    assert_eq!(trees[1].feedback_mode, FeedbackMode::Detailed);
    assert!(trees.iter().all(|t| t.kind == RunKind::Assurance));
    assert_eq!(w.twin.lock().vm(&dpi).unwrap().state, VmState::Running);

    // The same event never runs twice.
    let again = assure(&w.pipeline(&backend), &mut records[0], fresh[0].drift, FeedbackMode::Boolean);
    assert!(matches!(again, Err(AssuranceError::AlreadyRun(_))));
}

#[test]
fn duplicate_reports_open_one_event() {
    let w = World::new();
    let mut records = vec![w.fulfilled(true)];
    let web = records[0].knowledge.vms_for_role("web")[0].clone();
    let sinks = records[0].knowledge.sinks.clone();
    let mut opened = 0;
    for tick in [5, 10, 15] {
        let report = w.report(&records[0], &web, tick);
        let snapshot = w.twin.snapshot();
        opened += on_health_report(&report, &sinks, &mut records, &snapshot).unwrap().len();
    }
    assert_eq!(opened, 1);
    assert_eq!(records[0].drifts.len(), 1);
    assert_eq!(records[0].drifts[0].message(), format!(
        "The state of the web VM {web} is Shutdown, expected Running. Fix the intent."
    ));
}

#[test]
fn report_for_unowned_sink_is_rejected() {
    let w = World::new();
    let mut records = vec![w.fulfilled(true)];
    let report = HealthReport {
        check_id: "hc-9".into(),
        tick: 5,
        states: Default::default(),
    };
    let snapshot = w.twin.snapshot();
    let err = on_health_report(&report, &["elsewhere".into()], &mut records, &snapshot).unwrap_err();
    assert!(matches!(err, AssuranceError::UnknownSink(_)));
}

#[test]
fn no_permission_queues_for_human() {
    let w = World::new();
    let mut records = vec![w.fulfilled(false)];
    let dpi = records[0].knowledge.vms_for_role("dpi")[0].clone();
    let report = w.report(&records[0], &dpi, 5);
    let sinks = records[0].knowledge.sinks.clone();
    let snapshot = w.twin.snapshot();
    let fresh = on_health_report(&report, &sinks, &mut records, &snapshot).unwrap();
    let backend = ScriptedBackend::new(Vec::<String>::new());
    let err = assure(&w.pipeline(&backend), &mut records[0], fresh[0].drift, FeedbackMode::Boolean).unwrap_err();
    assert!(matches!(err, AssuranceError::PermissionDenied(_)));
    assert!(records[0].drifts[0].queued_for_human);
    assert_eq!(records[0].drifts[0].runs, 0);
}
