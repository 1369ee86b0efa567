use intent_core::executor::{FeedbackMode, IntentStatus};
use intent_core::gateway::{run_demo, Engine, EngineConfig, Scenario, SubmitOptions, USE_CASE};
use intent_core::oracle::RunKind;
use intent_core::pipeline::Terminal;
use intent_core::twin::FaultSpec;

#[test]
fn scenarios_pass() {
    for sc in Scenario::ALL {
        let mut engine = Engine::fresh(EngineConfig::default()).unwrap();
        let report = run_demo(&mut engine, sc).unwrap();
        assert!(report.passed(), "{sc}: {report:?}");
        assert_eq!(report.status, IntentStatus::Fulfilled);
    }
}

#[test]
fn fulfillment_is_validated_and_rehearsed() {
    let mut e = Engine::fresh(EngineConfig::default()).unwrap();
    let id = e.submit(USE_CASE, &SubmitOptions::default()).unwrap();
    let rec = e.record(&id).unwrap();
    assert!(rec.validation.as_ref().unwrap().accepted());
    assert!(rec.rehearsal.as_ref().unwrap().passed);
    let tree = rec.latest_tree().unwrap();
    for pair in tree.nodes.windows(2) {
        assert!(pair[0].recorded_at < pair[1].requested_at);
    }
}

#[test]
fn boolean_assurance_replaces_vm_after_failed_start() {
    let mut e = Engine::fresh(EngineConfig::default()).unwrap();
    let id = e.submit(USE_CASE, &SubmitOptions::default()).unwrap();
    let dpi = e.record(&id).unwrap().knowledge.vms_for_role("dpi")[0].clone();
    e.inject(&FaultSpec::Shutdown { vm: dpi.clone() }).unwrap();
    e.inject(&FaultSpec::FailNext {
        op: intent_core::twin::FaultOp::Start,
        target: dpi.clone(),
    })
    .unwrap();
    e.tick(10).unwrap();
    let rec = e.record(&id).unwrap();
    let assurance: Vec<_> = rec.trees().filter(|t| t.kind == RunKind::Assurance).collect();
    assert_eq!(assurance.len(), 1);
    assert_eq!(assurance[0].terminal, Terminal::End);
    assert_eq!(assurance[0].feedback_mode, FeedbackMode::Boolean);
    assert_eq!(assurance[0].len(), 10);
    assert!(!rec.knowledge.vms_for_role("dpi").contains(&dpi));
    assert_eq!(rec.status(), IntentStatus::Fulfilled);
    assert!(e.drifts().all(|d| !d.open && d.runs == 1));
}

#[test]
fn drift_without_permission_is_queued() {
    let mut e = Engine::fresh(EngineConfig::default()).unwrap();
    let opts = SubmitOptions {
        autonomic_permission: Some(false),
        ..Default::default()
    };
    let id = e.submit(USE_CASE, &opts).unwrap();
    let web = e.record(&id).unwrap().knowledge.vms_for_role("web")[1].clone();
    e.inject(&FaultSpec::Shutdown { vm: web }).unwrap();
    let summary = e.tick(5).unwrap();
    assert_eq!(summary.assurance.len(), 1);
    assert!(summary.assurance[0].error.is_some());
    assert_eq!(e.status(&id).unwrap(), IntentStatus::Degraded);
    assert!(e.drifts().all(|d| d.open && d.queued_for_human));
}

#[test]
fn unknown_intent_is_an_error() {
    let e = Engine::fresh(EngineConfig::default()).unwrap();
    assert!(e.status("intent-7").is_err());
}
