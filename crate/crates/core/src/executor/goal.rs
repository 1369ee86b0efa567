//! Goal predicate: does the twin currently satisfy an intent?

use serde::{Deserialize, Serialize};

use crate::oracle::IntentType;
use crate::twin::{TwinState, VmState};

use super::knowledge::KnowledgeStore;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub element: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum GoalVerdict {
    Holds,
    Violated(Vec<Violation>),
}

impl GoalVerdict {
    pub fn holds(&self) -> bool {
        matches!(self, GoalVerdict::Holds)
    }

    pub fn violations(&self) -> &[Violation] {
        match self {
            GoalVerdict::Holds => &[],
            GoalVerdict::Violated(v) => v,
        }
    }
}

/// Checks bound VMs are running, the chain is intact when a service was
/// deployed, and every bound VM is watched by an active check with a sink
/// when monitoring was asked for.
pub fn goal_predicate(types: &[IntentType], k: &KnowledgeStore, twin: &TwinState) -> GoalVerdict {
    let mut out = Vec::new();
    let mut violate = |element: &str, detail: String| {
        out.push(Violation {
            element: element.to_string(),
            detail,
        })
    };
    let bound = k.bound_vms();
    if bound.is_empty() && types.contains(&IntentType::CreateResource) {
        violate("vms", "no vms bound to the intent".into());
    }
    for id in &bound {
        let role = k.role_of(id).unwrap_or("?");
        match twin.vm(id).map(|vm| vm.state) {
            Some(VmState::Running) => {}
            Some(state) => violate(id, format!("{role} vm is {state}, expected Running")),
            None => violate(id, format!("{role} vm does not exist")),
        }
    }
    if types.contains(&IntentType::DeployService) {
        match k.chain() {
            None => violate("chain", "no chain bound to the intent".into()),
            Some(c) if !twin.chain_intact(c) => violate(c, "chain is not intact".into()),
            Some(_) => {}
        }
    }
    if types.contains(&IntentType::Availability) || types.contains(&IntentType::ScheduleHealthCheck)
    {
        for id in &bound {
            let covered = k.checks.iter().any(|c| {
                twin.health_checks()
                    .get(c)
                    .is_some_and(|hc| hc.active && hc.targets.contains(id))
                    && twin.notification_sinks().values().any(|s| s.check_id == *c)
            });
            if !covered {
                violate(id, "not watched by an active health check with a sink".into());
            }
        }
    }
    if out.is_empty() {
        GoalVerdict::Holds
    } else {
        GoalVerdict::Violated(out)
    }
}
