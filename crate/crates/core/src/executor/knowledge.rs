//! Per-intent knowledge: the K in MAPE-K.

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::twin::Inventory;

use super::feedback::{FeedbackMode, ProducedIds};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    #[default]
    Fulfillment,
    Assurance,
}

impl fmt::Display for RunKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunKind::Fulfillment => "fulfillment",
            RunKind::Assurance => "assurance",
        })
    }
}

/// Bindings produced while executing one intent's policies.
///
/// During fulfillment every list only grows. Assurance runs may drop a
/// deleted VM and bind its replacement.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeStore {
    pub zone: Option<String>,
    pub vms_by_role: IndexMap<String, Vec<String>>,
    pub reservations: Vec<String>,
    pub chains: Vec<String>,
    pub services: Vec<String>,
    pub checks: Vec<String>,
    pub sinks: Vec<String>,
    pub last_inventory: Option<Inventory>,
    pub feedback_mode: FeedbackMode,
    pub run: RunKind,
}

impl KnowledgeStore {
    pub fn new(mode: FeedbackMode) -> Self {
        Self {
            feedback_mode: mode,
            ..Self::default()
        }
    }

    pub fn bound_vms(&self) -> Vec<String> {
        self.vms_by_role.values().flatten().cloned().collect()
    }

    pub fn role_of(&self, vm: &str) -> Option<&str> {
        self.vms_by_role
            .iter()
            .find(|(_, ids)| ids.iter().any(|i| i == vm))
            .map(|(r, _)| r.as_str())
    }

    pub fn vms_for_role(&self, role: &str) -> &[String] {
        self.vms_by_role.get(role).map_or(&[], Vec::as_slice)
    }

    /// The chain most recently bound.
    pub fn chain(&self) -> Option<&str> {
        self.chains.last().map(String::as_str)
    }

    pub fn bind_vms(&mut self, role: &str, ids: &[String]) {
        self.vms_by_role
            .entry(role.to_string())
            .or_default()
            .extend(ids.iter().cloned());
    }

    /// Drops a VM binding. Refused outside assurance runs.
    pub fn unbind_vm(&mut self, vm: &str) -> bool {
        if self.run != RunKind::Assurance {
            return false;
        }
        let mut removed = false;
        for ids in self.vms_by_role.values_mut() {
            let before = ids.len();
            ids.retain(|i| i != vm);
            removed |= ids.len() != before;
        }
        removed
    }

    /// Records ids reported by an operation. VM ids are bound by the caller,
    /// which knows the role.
    pub fn absorb(&mut self, produced: &ProducedIds) {
        self.reservations.extend(produced.reservation_ids.iter().cloned());
        self.chains.extend(produced.chain_ids.iter().cloned());
        self.services.extend(produced.service_ids.iter().cloned());
        self.checks.extend(produced.check_ids.iter().cloned());
        self.sinks.extend(produced.sink_ids.iter().cloned());
    }

    /// True when every binding of `earlier` is still present, in place.
    pub fn extends(&self, earlier: &KnowledgeStore) -> bool {
        fn prefix(a: &[String], b: &[String]) -> bool {
            b.len() <= a.len() && a[..b.len()] == *b
        }
        prefix(&self.reservations, &earlier.reservations)
            && prefix(&self.chains, &earlier.chains)
            && prefix(&self.services, &earlier.services)
            && prefix(&self.checks, &earlier.checks)
            && prefix(&self.sinks, &earlier.sinks)
            && earlier.vms_by_role.iter().all(|(role, ids)| {
                self.vms_by_role
                    .get(role)
                    .is_some_and(|now| prefix(now, ids))
            })
            && (earlier.zone.is_none() || earlier.zone == self.zone)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unbind_only_in_assurance() {
        let mut k = KnowledgeStore::default();
        k.bind_vms("dpi", &["vm-1".to_string()]);
        assert!(!k.unbind_vm("vm-1"));
        k.run = RunKind::Assurance;
        let before = k.clone();
        assert!(k.unbind_vm("vm-1"));
        assert!(k.bound_vms().is_empty());
        assert!(!k.extends(&before));
        k.bind_vms("dpi", &["vm-5".to_string()]);
        assert_eq!(k.role_of("vm-5"), Some("dpi"));
    }
}
