//! Canned end-to-end scenarios on the service function chain use case.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::executor::{FeedbackMode, IntentStatus};
use crate::oracle::RunKind;
use crate::pipeline::Terminal;
use crate::twin::{FaultOp, FaultSpec};

use super::engine::{Engine, SubmitOptions};
use super::GatewayError;

pub const USE_CASE: &str = "Deploy a service function chain with high availability in Domain1 consisting of: a medium vm for the dpi service, a medium vm for the load-balancer service, and 2 small vms for the web servers.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Fulfill the use case from an empty twin.
    Fulfill,
    /// Shut down the dpi VM and let assurance restart it.
    Assure1,
    /// As `Assure1`, but the first restart fails and the VM is replaced.
    Assure2,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Fulfill, Scenario::Assure1, Scenario::Assure2];

    /// Policy count of the produced tree (summed over assurance trees).
    pub fn expected_policies(self) -> usize {
        match self {
            Scenario::Fulfill => 11,
            Scenario::Assure1 => 2,
            Scenario::Assure2 => 10,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Fulfill => "fulfill",
            Scenario::Assure1 => "assure-1",
            Scenario::Assure2 => "assure-2",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| format!("unknown scenario {s:?}; expected fulfill, assure-1 or assure-2"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DemoReport {
    pub scenario: Scenario,
    pub intent_id: String,
    pub policies: usize,
    pub expected: usize,
    pub terminal: Terminal,
    pub status: IntentStatus,
    pub goal_holds: bool,
    /// Assurance scenarios only.
    pub drift_closed: Option<bool>,
    pub duplicate_runs: bool,
    #[serde(skip)]
    pub elapsed: Duration,
    /// Rendered trees, fulfillment first.
    pub trees: Vec<String>,
}

impl DemoReport {
    pub fn passed(&self) -> bool {
        self.policies == self.expected
            && self.terminal == Terminal::End
            && self.goal_holds
            && self.drift_closed.unwrap_or(true)
            && !self.duplicate_runs
    }
}

fn record_goal(engine: &Engine, id: &str) -> bool {
    let rec = engine.record(id).expect("submitted intent exists");
    let twin = engine.twin().snapshot();
    crate::executor::goal_predicate(&rec.types, &rec.knowledge, &twin).holds()
}

/// Runs a scenario on `engine`, which should hold a fresh twin. The report
/// is returned whether or not it matches the expected outcome.
pub fn run_demo(engine: &mut Engine, scenario: Scenario) -> Result<DemoReport, GatewayError> {
    let started = Instant::now();
    let id = engine.submit(USE_CASE, &SubmitOptions::default())?;
    let period = engine.config().health_check_period;

    let mut drift_closed = None;
    if scenario != Scenario::Fulfill {
        let dpi = engine
            .record(&id)
            .and_then(|r| r.knowledge.vms_for_role("dpi").first().cloned())
            .ok_or_else(|| GatewayError::ScenarioMismatch {
                scenario: scenario.to_string(),
                detail: "fulfillment bound no dpi VM".into(),
            })?;
        engine.inject(&FaultSpec::Shutdown { vm: dpi.clone() })?;
        if scenario == Scenario::Assure2 {
            engine.inject(&FaultSpec::FailNext {
                op: FaultOp::Start,
                target: dpi,
            })?;
            engine.set_assurance_mode(FeedbackMode::Detailed);
        }
        let has_assurance = |e: &Engine| {
            e.record(&id)
                .is_some_and(|r| r.trees().any(|t| t.kind == RunKind::Assurance))
        };
        for _ in 0..2 * period {
            if has_assurance(engine) {
                break;
            }
            engine.tick(1)?;
        }
        for _ in 0..2 * period {
            if engine.drifts().all(|d| !d.open) {
                break;
            }
            engine.tick(1)?;
        }
        drift_closed = Some(has_assurance(engine) && engine.drifts().all(|d| !d.open));
        // One more period: a closed drift must not trigger another run.
        engine.tick(period)?;
    }

    let rec = engine.record(&id).expect("submitted intent exists");
    let (policies, terminal) = match scenario {
        Scenario::Fulfill => {
            let t = rec.trees().next().expect("fulfillment tree");
            (t.len(), t.terminal)
        }
        _ => {
            let assurance: Vec<_> = rec.trees().filter(|t| t.kind == RunKind::Assurance).collect();
            let terminal = assurance.last().map_or(Terminal::InProgress, |t| t.terminal);
            (assurance.iter().map(|t| t.len()).sum(), terminal)
        }
    };
    let duplicate_runs = rec.drifts.len() > 1 || rec.drifts.iter().any(|d| d.runs > 1);
    Ok(DemoReport {
        scenario,
        intent_id: id.clone(),
        policies,
        expected: scenario.expected_policies(),
        terminal,
        status: rec.status(),
        goal_holds: record_goal(engine, &id),
        drift_closed,
        duplicate_runs,
        elapsed: started.elapsed(),
        trees: rec.trees().map(|t| t.render()).collect(),
    })
}
