//! Stage 3: policy-tree validation.
//!
//! A rule-checked core always runs. Findings from the backend are merged in
//! afterwards and never override a rule finding for the same node.

use std::collections::HashSet;
use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::executor::{parse_items, MappingTable};
use crate::llm::{Backend, ChatSession, LlmError};
use crate::oracle::{
    format_types, EntitySet, IntentType, PlanSettings, RunKind, GENERIC_ROLE, VALIDATE_PREFIX,
};
use crate::policy::{
    assign_enforcer, ActionKind, ConstraintValue, Policy, PolicyError, ResourceKind,
};
use crate::twin::{ReservationItem, Size};

use super::tree::PolicyTree;

/// Prefix of a finding line in a backend's validation reply.
pub const FINDING_PREFIX: &str = "FINDING";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FindingCategory {
    Omission,
    FormatError,
    WrongOrder,
    UnknownAction,
    WrongEnforcer,
}

impl FindingCategory {
    pub const ALL: [FindingCategory; 5] = [
        FindingCategory::Omission,
        FindingCategory::FormatError,
        FindingCategory::WrongOrder,
        FindingCategory::UnknownAction,
        FindingCategory::WrongEnforcer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FindingCategory::Omission => "omission",
            FindingCategory::FormatError => "format-error",
            FindingCategory::WrongOrder => "wrong-order",
            FindingCategory::UnknownAction => "unknown-action",
            FindingCategory::WrongEnforcer => "wrong-enforcer",
        }
    }
}

impl std::str::FromStr for FindingCategory {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Self::ALL.into_iter().find(|c| c.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    /// Node index, or `None` for a tree-level finding.
    pub node: Option<usize>,
    pub category: FindingCategory,
    pub description: String,
    /// Attribute a finding is about, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
}

impl Finding {
    fn at(node: usize, category: FindingCategory, description: impl Into<String>) -> Self {
        Self {
            node: Some(node),
            category,
            description: description.into(),
            key: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
    /// The tree with omissions filled in from the intent's entities, when
    /// every finding could be repaired that way.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected: Option<PolicyTree>,
}

impl ValidationReport {
    pub fn accepted(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has(&self, category: FindingCategory) -> bool {
        self.findings.iter().any(|f| f.category == category)
    }
}

fn check_format(i: usize, p: &Policy, out: &mut Vec<Finding>) {
    if let Some(v) = p.constraints.get("size") {
        if v.as_str().and_then(|s| s.parse::<Size>().ok()).is_none() {
            out.push(Finding::at(i, FindingCategory::FormatError, format!("size {v} is not a flavor")));
        }
    }
    for key in ["count", "period"] {
        if let Some(v) = p.constraints.get(key) {
            if !v.as_int().is_some_and(|n| n > 0) {
                out.push(Finding::at(
                    i,
                    FindingCategory::FormatError,
                    format!("{key} {v} is not a positive integer"),
                ));
            }
        }
    }
    if let Some(items) = p.str_param("items") {
        if let Err(e) = parse_items(items) {
            out.push(Finding::at(i, FindingCategory::FormatError, e.to_string()));
        }
    }
}

/// Reservation items named by a reserve policy.
fn reserve_items(p: &Policy) -> Vec<ReservationItem> {
    if let Some(items) = p.str_param("items") {
        return parse_items(items).unwrap_or_default();
    }
    match p.str_param("size").and_then(|s| s.parse().ok()) {
        Some(size) => vec![ReservationItem {
            size,
            count: p.int_param("count").unwrap_or(1).max(1) as u64,
        }],
        None => Vec::new(),
    }
}

#[derive(Default)]
struct OrderState {
    inventories: HashSet<String>,
    available: HashSet<(String, Size)>,
    reserved: Vec<(String, Size, u64)>,
    vm_ids: HashSet<String>,
    roles: HashSet<String>,
    validated: bool,
    deployed: bool,
    checks: HashSet<String>,
}

impl OrderState {
    fn known_target(&self, t: &str) -> bool {
        self.vm_ids.contains(t) || self.roles.contains(t)
    }
}

/// MAPE precedence rules over successfully executed prerequisites.
fn check_order(tree: &PolicyTree, parsed: &[Option<Policy>], out: &mut Vec<Finding>) {
    let present = |a: ActionKind| parsed.iter().flatten().any(|p| p.action == a);
    let creates = present(ActionKind::Create);
    let deploys = tree.kind == RunKind::Fulfillment && present(ActionKind::Deploy);
    let mut st = OrderState::default();
    let wrong = |i: usize, d: String| Finding::at(i, FindingCategory::WrongOrder, d);
    for (i, (node, p)) in tree.nodes.iter().zip(parsed).enumerate() {
        let Some(p) = p else { continue };
        let ok = node.succeeded();
        let zone = p.str_param("zone").unwrap_or_default().to_string();
        let targets = p.list_param("target");
        match (p.action, p.resource) {
            (ActionKind::Get, ResourceKind::Inventory) => {
                if ok {
                    st.inventories.insert(zone);
                }
            }
            (ActionKind::Avail, _) => {
                if !st.inventories.contains(&zone) {
                    out.push(wrong(i, format!("avail before get inventory in {zone}")));
                }
                if let (true, Some(size)) = (ok, p.str_param("size").and_then(|s| s.parse().ok())) {
                    st.available.insert((zone, size));
                }
            }
            (ActionKind::Reserve, _) => {
                let items = reserve_items(p);
                for it in &items {
                    if !st.available.contains(&(zone.clone(), it.size)) {
                        out.push(wrong(
                            i,
                            format!("reserve of {} before a successful avail", it.size),
                        ));
                    }
                }
                if ok {
                    st.reserved
                        .extend(items.into_iter().map(|it| (zone.clone(), it.size, it.count)));
                }
            }
            (ActionKind::Create, ResourceKind::Vm) => {
                let size: Option<Size> = p.str_param("size").and_then(|s| s.parse().ok());
                let count = p.int_param("count").unwrap_or(1).max(1) as u64;
                let slot = size.and_then(|s| {
                    st.reserved
                        .iter_mut()
                        .find(|(z, rs, left)| *z == zone && *rs == s && *left >= count)
                });
                match slot {
                    Some(slot) => {
                        if ok {
                            slot.2 -= count;
                        }
                    }
                    None => out.push(wrong(i, "create before a matching successful reserve".into())),
                }
                if ok {
                    st.roles
                        .insert(p.str_param("role").unwrap_or(GENERIC_ROLE).to_string());
                    if let Some(r) = &node.result {
                        st.vm_ids.extend(r.produced.vm_ids.iter().cloned());
                    }
                }
            }
            (ActionKind::Start | ActionKind::Stop | ActionKind::Delete, ResourceKind::Vm) => {
                if ok && p.action == ActionKind::Start {
                    st.vm_ids.extend(targets);
                }
            }
            (ActionKind::Discover, _) => {
                if let (true, Some(r)) = (ok, &node.result) {
                    st.vm_ids.extend(r.produced.vm_ids.iter().cloned());
                    st.vm_ids.extend(r.produced.service_ids.iter().cloned());
                }
            }
            (ActionKind::Validate | ActionKind::Collect, _)
            | (ActionKind::Update, _)
            | (ActionKind::Schedule, _) => {
                for t in targets.iter().filter(|t| !st.known_target(t)) {
                    out.push(wrong(i, format!("{} of {t} before it was created or started", p.action)));
                }
                if p.action == ActionKind::Schedule {
                    if deploys && !st.deployed {
                        out.push(wrong(i, "health check scheduled before the chain was deployed".into()));
                    }
                    if let (true, Some(r)) = (ok, &node.result) {
                        st.checks.extend(r.produced.check_ids.iter().cloned());
                    }
                }
                if ok && p.action == ActionKind::Validate && p.resource == ResourceKind::Vm {
                    st.validated = true;
                }
            }
            (ActionKind::Deploy, _) => {
                if creates {
                    for role in p.list_param("services") {
                        if !st.roles.contains(&role) {
                            out.push(wrong(i, format!("deploy references {role} with no created vm")));
                        }
                    }
                    if !st.validated {
                        out.push(wrong(i, "deploy before the created vms were validated".into()));
                    }
                }
                if ok {
                    st.deployed = true;
                }
            }
            (ActionKind::Notify, _) => {
                if deploys && !st.deployed {
                    out.push(wrong(i, "notification set before the chain was deployed".into()));
                }
                for t in targets.iter().filter(|t| !st.checks.contains(*t)) {
                    out.push(wrong(i, format!("notification on {t} before the check was scheduled")));
                }
            }
            _ => {}
        }
    }
}

/// The rule-checked validator core.
pub fn rule_check(tree: &PolicyTree, mapping: &MappingTable) -> Vec<Finding> {
    let mut out = Vec::new();
    let mut parsed = Vec::with_capacity(tree.len());
    for (i, node) in tree.nodes.iter().enumerate() {
        let p = match node.parsed() {
            Ok(p) => p,
            Err(e) => {
                let category = match e {
                    PolicyError::UnknownAction(_) => FindingCategory::UnknownAction,
                    _ => FindingCategory::FormatError,
                };
                out.push(Finding::at(i, category, e.to_string()));
                parsed.push(None);
                continue;
            }
        };
        let expected = assign_enforcer(p.action);
        if node.stage != expected {
            out.push(Finding::at(
                i,
                FindingCategory::WrongEnforcer,
                format!("{} is enforced by {expected}, not {}", p.action, node.stage),
            ));
        }
        match mapping.lookup(p.action, p.resource) {
            None => out.push(Finding::at(
                i,
                FindingCategory::UnknownAction,
                format!("no operation for {} on {}", p.action, p.resource),
            )),
            Some(entry) => {
                for key in entry.missing_keys(&p) {
                    out.push(Finding {
                        description: format!("{} {} lacks {key}", p.action, p.resource),
                        key: Some(key),
                        ..Finding::at(i, FindingCategory::Omission, "")
                    });
                }
            }
        }
        check_format(i, &p, &mut out);
        parsed.push(Some(p));
    }
    check_order(tree, &parsed, &mut out);
    out
}

fn fill_value(key: &str, p: &Policy, e: &EntitySet, s: &PlanSettings) -> Option<ConstraintValue> {
    let request = || e.request_for_role(p.str_param("role").unwrap_or(GENERIC_ROLE));
    let by_size = |size: Size| {
        e.counts_by_size()
            .into_iter()
            .find(|(s, _)| *s == size)
            .map(|(_, c)| c)
    };
    let size = p.str_param("size").and_then(|s| s.parse::<Size>().ok());
    Some(match key {
        "zone" => ConstraintValue::Text(e.zone.clone()),
        "period" => ConstraintValue::Int(s.period as i64),
        "sink" => ConstraintValue::Text(s.sink.clone()),
        "size" if p.action == ActionKind::Create => ConstraintValue::Text(request()?.size.to_string()),
        "count" if p.action == ActionKind::Create => ConstraintValue::Int(request()?.count as i64),
        "count" => ConstraintValue::Int(by_size(size?)? as i64),
        "services" => {
            let roles = if e.chain_order.is_empty() {
                e.vm_requests
                    .iter()
                    .map(|r| r.role.clone())
                    .filter(|r| r != GENERIC_ROLE)
                    .collect::<Vec<_>>()
            } else {
                e.chain_order.clone()
            };
            if roles.is_empty() {
                return None;
            }
            ConstraintValue::Text(roles.join(","))
        }
        "items" | "items|size" => {
            let items: IndexMap<Size, u64> = e.counts_by_size().into_iter().collect();
            if items.is_empty() {
                return None;
            }
            let text: Vec<String> = items.iter().map(|(s, c)| format!("{s}:{c}")).collect();
            ConstraintValue::Text(text.join(","))
        }
        _ => return None,
    })
}

/// Fills omitted attributes from the intent's entities. Returns `None` when
/// some finding is structural or a value cannot be recovered.
pub fn correct_tree(
    tree: &PolicyTree,
    findings: &[Finding],
    entities: &EntitySet,
    settings: &PlanSettings,
) -> Option<PolicyTree> {
    let mut out = tree.clone();
    for f in findings {
        if f.category != FindingCategory::Omission {
            return None;
        }
        let node = &mut out.nodes[f.node?];
        let mut p = node.parsed().ok()?;
        let key = f.key.as_deref()?;
        let value = fill_value(key, &p, entities, settings)?;
        let name = key.split('|').next().unwrap_or(key);
        p.constraints.insert(name, value);
        node.policy = p.to_json();
    }
    Some(out)
}

fn parse_backend_findings(reply: &str, nodes: usize) -> Vec<Finding> {
    let mut out = Vec::new();
    for line in reply.lines() {
        let Some(rest) = line.trim().strip_prefix(FINDING_PREFIX) else {
            continue;
        };
        let mut parts = rest.trim().splitn(3, ' ');
        let (Some(cat), Some(at)) = (parts.next(), parts.next()) else {
            continue;
        };
        let Ok(category) = cat.parse::<FindingCategory>() else {
            continue;
        };
        let node = match at.strip_prefix("node=") {
            Some(n) => match n.parse::<usize>() {
                Ok(n) if n < nodes => Some(n),
                _ => continue,
            },
            None if at == "tree" => None,
            None => continue,
        };
        out.push(Finding {
            node,
            category,
            description: parts.next().unwrap_or("").trim().to_string(),
            key: None,
        });
    }
    out
}

fn validation_message(text: &str, types: &[IntentType], tree: &PolicyTree) -> String {
    let mut msg = format!(
        "{VALIDATE_PREFIX}{text}\nIntent types: {}\nMode: {}\nPolicies:",
        format_types(types),
        tree.kind
    );
    for n in &tree.nodes {
        let _ = write!(msg, "\n{}. {} -> {}", n.index, n.policy, n.feedback);
    }
    let _ = write!(msg, "\nTerminal: {}", tree.terminal.as_str());
    msg
}

/// Validates `tree` with the rule core and the backend.
#[allow(clippy::too_many_arguments)]
pub fn validate_tree(
    text: &str,
    types: &[IntentType],
    tree: &PolicyTree,
    backend: &dyn Backend,
    system: &str,
    mapping: &MappingTable,
    entities: Option<&EntitySet>,
    settings: &PlanSettings,
) -> Result<ValidationReport, LlmError> {
    let mut findings = rule_check(tree, mapping);
    let mut session = ChatSession::new("validate", backend, system);
    let reply = session.complete(&validation_message(text, types, tree))?;
    for f in parse_backend_findings(&reply, tree.len()) {
        if !findings.iter().any(|r| r.node == f.node && r.category == f.category) {
            findings.push(f);
        }
    }
    let corrected = match entities {
        Some(e) if !findings.is_empty() => correct_tree(tree, &findings, e, settings),
        _ => None,
    };
    Ok(ValidationReport { findings, corrected })
}
