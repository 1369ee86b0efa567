//! MAPE-K execution: policy → twin operation mapping, execution, feedback and
//! knowledge bookkeeping.

pub mod feedback;
pub mod goal;
pub mod knowledge;
pub mod record;

use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::GENERIC_ROLE;
use crate::policy::{split_list, ActionKind, ConstraintValue, Policy, PolicyMetadata, ResourceKind};
use crate::twin::{
    ReservationItem, ServiceCommand, Size, TwinError, TwinHandle, TwinState, VmCommand,
};

pub use feedback::{
    parse_feedback, summarize_result, ExecutionResult, Feedback, FeedbackMode, ProducedIds,
};
pub use goal::{goal_predicate, GoalVerdict, Violation};
pub use knowledge::{KnowledgeStore, RunKind};
pub use record::{IntentRecord, IntentStatus};

const BUILTIN_MAPPING: &str = include_str!("../../data/mapping.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    GetInventory,
    CheckAvailability,
    Reserve,
    CreateVm,
    ValidateVms,
    ValidateServices,
    DeployChain,
    VmCommand,
    ServiceCommand,
    UpdateChain,
    ScheduleHealthCheck,
    SetNotification,
    DiscoverVms,
    DiscoverServices,
    CollectStates,
}

impl Operation {
    pub fn name(self) -> &'static str {
        match self {
            Operation::GetInventory => "get_inventory",
            Operation::CheckAvailability => "check_availability",
            Operation::Reserve => "reserve",
            Operation::CreateVm => "create_vm",
            Operation::ValidateVms => "validate_vms",
            Operation::ValidateServices => "validate_services",
            Operation::DeployChain => "deploy_chain",
            Operation::VmCommand => "vm_command",
            Operation::ServiceCommand => "service_command",
            Operation::UpdateChain => "update_chain",
            Operation::ScheduleHealthCheck => "schedule_health_check",
            Operation::SetNotification => "set_notification",
            Operation::DiscoverVms => "discover_vms",
            Operation::DiscoverServices => "discover_services",
            Operation::CollectStates => "collect_states",
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingEntry {
    pub action: ActionKind,
    pub resource: ResourceKind,
    pub operation: Operation,
    #[serde(default)]
    pub required: Vec<String>,
    #[serde(default)]
    pub any_of: Vec<String>,
    #[serde(default)]
    pub produces: Vec<String>,
}

impl MappingEntry {
    /// Required keys absent from `p`. A missing `any_of` group is reported
    /// as "a|b".
    pub fn missing_keys(&self, p: &Policy) -> Vec<String> {
        let mut out: Vec<String> = self
            .required
            .iter()
            .filter(|k| !p.constraints.contains(k))
            .cloned()
            .collect();
        if !self.any_of.is_empty() && !self.any_of.iter().any(|k| p.constraints.contains(k)) {
            out.push(self.any_of.join("|"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct MappingTable {
    mapping: Vec<MappingEntry>,
}

impl Default for MappingTable {
    fn default() -> Self {
        Self::parse(BUILTIN_MAPPING).expect("built-in mapping is valid")
    }
}

impl MappingTable {
    pub fn parse(text: &str) -> Result<Self, String> {
        let table: MappingTable = toml::from_str(text).map_err(|e| e.to_string())?;
        for (i, e) in table.mapping.iter().enumerate() {
            if table.mapping[..i]
                .iter()
                .any(|o| o.action == e.action && o.resource == e.resource)
            {
                return Err(format!("duplicate mapping for {} {}", e.action, e.resource));
            }
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn lookup(&self, action: ActionKind, resource: ResourceKind) -> Option<&MappingEntry> {
        self.mapping
            .iter()
            .find(|e| e.action == action && e.resource == resource)
    }

    pub fn entries(&self) -> &[MappingEntry] {
        &self.mapping
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MapError {
    #[error("no operation for {action} on {resource}")]
    UnmappedAction {
        action: ActionKind,
        resource: ResourceKind,
    },
    #[error("missing parameter {0:?}")]
    MissingParameter(String),
    #[error("bad parameter {key:?}: {reason}")]
    BadParameter { key: String, reason: String },
    #[error("unresolved binding: {0}")]
    UnresolvedBinding(String),
}

/// A bound twin call: the policy's constraints plus values resolved from
/// the knowledge store (`reservation`, `chain`, `only`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApiCall {
    pub operation: Operation,
    pub params: IndexMap<String, ConstraintValue>,
    pub policy_id: Option<String>,
}

impl ApiCall {
    fn text(&self, key: &str) -> Result<&str, MapError> {
        match self.params.get(key) {
            Some(ConstraintValue::Text(s)) => Ok(s),
            Some(ConstraintValue::Int(_)) => Err(MapError::BadParameter {
                key: key.into(),
                reason: "expected text".into(),
            }),
            None => Err(MapError::MissingParameter(key.into())),
        }
    }

    fn opt_text(&self, key: &str) -> Option<&str> {
        self.params.get(key).and_then(ConstraintValue::as_str)
    }

    fn int(&self, key: &str) -> Result<u64, MapError> {
        match self.params.get(key) {
            Some(ConstraintValue::Int(n)) if *n >= 0 => Ok(*n as u64),
            Some(_) => Err(MapError::BadParameter {
                key: key.into(),
                reason: "expected a non-negative integer".into(),
            }),
            None => Err(MapError::MissingParameter(key.into())),
        }
    }

    fn size(&self) -> Result<Size, MapError> {
        let raw = self.text("size")?;
        raw.parse().map_err(|_| MapError::BadParameter {
            key: "size".into(),
            reason: format!("unknown size {raw:?}"),
        })
    }

    fn list(&self, key: &str) -> Result<Vec<String>, MapError> {
        let items = split_list(self.text(key)?);
        if items.is_empty() {
            return Err(MapError::BadParameter {
                key: key.into(),
                reason: "empty list".into(),
            });
        }
        Ok(items)
    }
}

/// Parses "medium:2,small:2".
pub fn parse_items(text: &str) -> Result<Vec<ReservationItem>, MapError> {
    let bad = |reason: String| MapError::BadParameter {
        key: "items".into(),
        reason,
    };
    let items = split_list(text)
        .into_iter()
        .map(|entry| {
            let (size, count) = entry
                .split_once(':')
                .ok_or_else(|| bad(format!("expected size:count, got {entry:?}")))?;
            Ok(ReservationItem {
                size: size.parse().map_err(|_| bad(format!("unknown size {size:?}")))?,
                count: count
                    .trim()
                    .parse()
                    .map_err(|_| bad(format!("bad count {count:?}")))?,
            })
        })
        .collect::<Result<Vec<_>, MapError>>()?;
    if items.is_empty() {
        return Err(bad("no items".into()));
    }
    Ok(items)
}

/// Expands role names to the intent's VMs of that role; ids pass through.
fn resolve_targets(targets: Vec<String>, k: &KnowledgeStore) -> Vec<String> {
    let mut out = Vec::new();
    for t in targets {
        let bound = k.vms_for_role(&t);
        if bound.is_empty() {
            out.push(t);
        } else {
            out.extend(bound.iter().cloned());
        }
    }
    out
}

/// Looks up the operation for `p` and binds implicit parameters from `k`.
pub fn map_policy_to_api(
    p: &Policy,
    policy_id: Option<&str>,
    k: &KnowledgeStore,
    table: &MappingTable,
    twin: &TwinState,
) -> Result<ApiCall, MapError> {
    let entry = table
        .lookup(p.action, p.resource)
        .ok_or(MapError::UnmappedAction {
            action: p.action,
            resource: p.resource,
        })?;
    if let Some(key) = entry.missing_keys(p).into_iter().next() {
        return Err(MapError::MissingParameter(key));
    }
    let mut call = ApiCall {
        operation: entry.operation,
        params: p
            .constraints
            .iter_wire()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
        policy_id: policy_id.map(String::from),
    };
    match entry.operation {
        Operation::CreateVm => {
            let zone = call.text("zone")?.to_string();
            let size = call.size()?;
            let count = call.int("count")?;
            let reservation = match p.str_param("reservation") {
                Some(r) if k.reservations.iter().any(|x| x == r) => Some(r.to_string()),
                Some(r) => {
                    return Err(MapError::UnresolvedBinding(format!(
                        "reservation {r} is not known to this intent"
                    )))
                }
                None => k
                    .reservations
                    .iter()
                    .rev()
                    .find(|id| {
                        twin.reservations()
                            .get(*id)
                            .is_some_and(|r| r.zone == zone && r.remaining(size) >= count)
                    })
                    .cloned(),
            };
            if let Some(r) = reservation {
                call.params.insert("reservation".into(), r.into());
            }
        }
        Operation::UpdateChain => {
            let chain = k
                .chain()
                .ok_or_else(|| MapError::UnresolvedBinding("no chain bound to this intent".into()))?;
            call.params.insert("chain".into(), chain.into());
        }
        Operation::DeployChain => {
            let bound = k.bound_vms();
            if !bound.is_empty() {
                call.params.insert("only".into(), bound.join(",").into());
            }
        }
        _ => {}
    }
    Ok(call)
}

fn twin_err(op: Operation, e: TwinError) -> ExecutionResult {
    ExecutionResult::failed(op.name(), e.to_string())
}

/// Runs a bound call against the twin and updates `k` with what it produced.
pub fn run_call(
    call: &ApiCall,
    action: ActionKind,
    twin: &mut TwinState,
    k: &mut KnowledgeStore,
) -> Result<ExecutionResult, MapError> {
    let op = call.operation;
    let name = op.name();
    let mut produced = ProducedIds::default();
    if k.zone.is_none() {
        k.zone = call.opt_text("zone").map(String::from);
    }
    let result = match op {
        Operation::GetInventory => match twin.get_inventory(call.text("zone")?) {
            Ok(inv) => {
                let msg = format!("free {}", inv.capacity.free);
                k.last_inventory = Some(inv);
                ExecutionResult::ok(name, msg, produced)
            }
            Err(e) => twin_err(op, e),
        },
        Operation::CheckAvailability => {
            let (zone, size, count) = (call.text("zone")?, call.size()?, call.int("count")?);
            match twin.check_availability(zone, size, count) {
                Ok(a) if a.available => {
                    ExecutionResult::ok(name, format!("{count} x {size} available"), produced)
                }
                Ok(a) => {
                    let mut r = ExecutionResult::failed(
                        name,
                        format!("{count} x {size} does not fit in {zone}"),
                    );
                    r.alternatives = a.alternatives;
                    r
                }
                Err(e) => twin_err(op, e),
            }
        }
        Operation::Reserve => {
            let items = match call.opt_text("items") {
                Some(text) => parse_items(text)?,
                None => vec![ReservationItem {
                    size: call.size()?,
                    count: call.int("count").unwrap_or(1),
                }],
            };
            match twin.reserve(call.text("zone")?, &items, None) {
                Ok(id) => {
                    produced.reservation_ids.push(id.clone());
                    ExecutionResult::ok(name, format!("reserved {id}"), produced)
                }
                Err(e) => twin_err(op, e),
            }
        }
        Operation::CreateVm => {
            let role = call.opt_text("role").unwrap_or(GENERIC_ROLE).to_string();
            match twin.create_vm(
                call.text("zone")?,
                &role,
                call.size()?,
                call.int("count")?,
                call.opt_text("reservation"),
            ) {
                Ok(ids) => {
                    k.bind_vms(&role, &ids);
                    produced.vm_ids = ids;
                    ExecutionResult::ok(name, format!("created {role} vms"), produced)
                }
                Err(e) => twin_err(op, e),
            }
        }
        Operation::ValidateVms => {
            let v = twin.validate_vms(&resolve_targets(call.list("target")?, k));
            if v.ok() {
                ExecutionResult::ok(name, format!("{} vms running", v.matched.len()), produced)
            } else if v.matched.is_empty() && v.offending.is_empty() {
                ExecutionResult::failed(name, "no vms matched")
            } else {
                let detail: Vec<String> =
                    v.offending.iter().map(|(id, why)| format!("{id} {why}")).collect();
                ExecutionResult::failed(name, detail.join(", "))
            }
        }
        Operation::ValidateServices => {
            let v = twin.validate_services(&call.list("target")?);
            if v.ok() {
                ExecutionResult::ok(name, "services running", produced)
            } else {
                let detail: Vec<String> =
                    v.offending.iter().map(|(id, why)| format!("{id} {why}")).collect();
                ExecutionResult::failed(name, detail.join(", "))
            }
        }
        Operation::DeployChain => {
            let only = call.opt_text("only").map(split_list);
            match twin.deploy_chain(call.text("zone")?, &call.list("services")?, only.as_deref()) {
                Ok(dep) => {
                    produced.chain_ids.push(dep.chain_id.clone());
                    produced.service_ids = dep.service_ids;
                    ExecutionResult::ok(name, format!("deployed {}", dep.chain_id), produced)
                }
                Err(e) => twin_err(op, e),
            }
        }
        Operation::VmCommand => {
            let cmd = match action {
                ActionKind::Start => VmCommand::Start,
                ActionKind::Stop => VmCommand::Stop,
                ActionKind::Delete => VmCommand::Delete,
                other => {
                    return Err(MapError::BadParameter {
                        key: "action".into(),
                        reason: format!("{other} is not a vm command"),
                    })
                }
            };
            let mut failure = None;
            for id in resolve_targets(call.list("target")?, k) {
                if let Err(e) = twin.vm_command(&id, cmd) {
                    failure = Some(twin_err(op, e));
                    break;
                }
                if cmd == VmCommand::Delete {
                    k.unbind_vm(&id);
                }
            }
            failure.unwrap_or_else(|| ExecutionResult::ok(name, format!("{action} done"), produced))
        }
        Operation::ServiceCommand => {
            let cmd = match action {
                ActionKind::Start => ServiceCommand::Start,
                ActionKind::Stop => ServiceCommand::Stop,
                ActionKind::Run => ServiceCommand::Run,
                ActionKind::Publish => ServiceCommand::Publish,
                other => {
                    return Err(MapError::BadParameter {
                        key: "action".into(),
                        reason: format!("{other} is not a service command"),
                    })
                }
            };
            let mut failure = None;
            for id in call.list("target")? {
                if let Err(e) = twin.service_command(&id, cmd) {
                    failure = Some(twin_err(op, e));
                    break;
                }
            }
            failure.unwrap_or_else(|| ExecutionResult::ok(name, format!("{action} done"), produced))
        }
        Operation::UpdateChain => {
            let targets = resolve_targets(call.list("target")?, k);
            let role = call.text("role")?;
            match twin.update_chain(call.text("chain")?, role, &targets[0]) {
                Ok(svc) => {
                    produced.service_ids.push(svc);
                    ExecutionResult::ok(name, format!("{role} slot rebound"), produced)
                }
                Err(e) => twin_err(op, e),
            }
        }
        Operation::ScheduleHealthCheck => {
            let targets = resolve_targets(call.list("target")?, k);
            match twin.schedule_health_check(&targets, call.int("period")?) {
                Ok(id) => {
                    produced.check_ids.push(id.clone());
                    ExecutionResult::ok(name, format!("scheduled {id}"), produced)
                }
                Err(e) => twin_err(op, e),
            }
        }
        Operation::SetNotification => {
            match twin.set_notification(call.text("target")?, call.text("sink")?) {
                Ok(id) => {
                    produced.sink_ids.push(id.clone());
                    ExecutionResult::ok(name, format!("attached {id}"), produced)
                }
                Err(e) => twin_err(op, e),
            }
        }
        Operation::DiscoverVms => match twin.discover_vms(call.text("zone")?, call.opt_text("role")) {
            Ok(ids) => {
                produced.vm_ids = ids;
                ExecutionResult::ok(name, "discovered vms", produced)
            }
            Err(e) => twin_err(op, e),
        },
        Operation::DiscoverServices => {
            match twin.discover_services(call.text("zone")?, call.opt_text("role")) {
                Ok(ids) => {
                    produced.service_ids = ids;
                    ExecutionResult::ok(name, "discovered services", produced)
                }
                Err(e) => twin_err(op, e),
            }
        }
        Operation::CollectStates => {
            match twin.collect_states(&resolve_targets(call.list("target")?, k)) {
                Ok(states) => {
                    let msg: Vec<String> =
                        states.iter().map(|(id, s)| format!("{id}={s}")).collect();
                    ExecutionResult::ok(name, msg.join(", "), produced)
                }
                Err(e) => twin_err(op, e),
            }
        }
    };
    if result.success {
        k.absorb(&result.produced);
    }
    Ok(result)
}

/// Executes policies for one intent against the shared twin.
pub struct Executor<'a> {
    pub twin: &'a TwinHandle,
    pub mapping: &'a MappingTable,
    pub knowledge: &'a mut KnowledgeStore,
}

impl<'a> Executor<'a> {
    pub fn new(
        twin: &'a TwinHandle,
        mapping: &'a MappingTable,
        knowledge: &'a mut KnowledgeStore,
    ) -> Self {
        Self {
            twin,
            mapping,
            knowledge,
        }
    }

    /// Maps and runs `p` as one serialized twin command. Ordering is not
    /// policed here; whatever the twin says comes back as the result.
    pub fn execute_policy(&mut self, p: &Policy, meta: Option<&PolicyMetadata>) -> ExecutionResult {
        let mapping = self.mapping;
        let k = &mut *self.knowledge;
        self.twin.submit(|state| {
            if meta.is_some_and(|m| m.is_expired(state.clock())) {
                return ExecutionResult::failed("", "expired");
            }
            let id = meta.map(|m| m.policy_id.as_str());
            let call = match map_policy_to_api(p, id, k, mapping, state) {
                Ok(c) => c,
                Err(e) => {
                    let op = mapping
                        .lookup(p.action, p.resource)
                        .map_or("", |e| e.operation.name());
                    return ExecutionResult::failed(op, e.to_string());
                }
            };
            run_call(&call, p.action, state, k)
                .unwrap_or_else(|e| ExecutionResult::failed(call.operation.name(), e.to_string()))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::parse_policy;
    use crate::twin::{FaultOp, FaultSpec, VmState};

    fn exec(twin: &TwinHandle, k: &mut KnowledgeStore, json: &str) -> ExecutionResult {
        let table = MappingTable::default();
        Executor::new(twin, &table, k).execute_policy(&parse_policy(json).unwrap(), None)
    }

    #[test]
    fn table_is_total_over_template_actions() {
        let table = MappingTable::default();
        for (a, r) in crate::oracle::TemplateSet::default().emitted_pairs() {
            assert!(table.lookup(a, r).is_some(), "no mapping for {a} {r}");
        }
    }

    #[test]
    fn avail_example_maps_to_check_availability() {
        let p = parse_policy(r#"{"action":"avail","resource":"vm","zone":"Domain1","size":"small","count":1}"#).unwrap();
        let call = map_policy_to_api(
            &p,
            None,
            &KnowledgeStore::default(),
            &MappingTable::default(),
            &TwinState::default(),
        )
        .unwrap();
        assert_eq!(call.operation, Operation::CheckAvailability);
        assert_eq!(call.params["zone"], ConstraintValue::from("Domain1"));
        assert_eq!(call.params["size"], ConstraintValue::from("small"));
        assert_eq!(call.params["count"], ConstraintValue::Int(1));
    }

    #[test]
    fn create_binds_reservation_from_knowledge() {
        let twin = TwinHandle::default();
        let mut k = KnowledgeStore::default();
        let r = exec(&twin, &mut k, r#"{"action":"reserve","resource":"vm","zone":"Domain1","items":"medium:2,small:2"}"#);
        assert!(r.success);
        assert_eq!(k.reservations, ["res-1"]);
        let p = parse_policy(r#"{"action":"create","resource":"vm","zone":"Domain1","role":"dpi","size":"medium","count":1}"#).unwrap();
        let call = map_policy_to_api(&p, None, &k, &MappingTable::default(), &twin.snapshot()).unwrap();
        assert_eq!(call.operation, Operation::CreateVm);
        assert_eq!(call.params["reservation"], ConstraintValue::from("res-1"));

        let stray = parse_policy(r#"{"action":"create","resource":"vm","zone":"Domain1","size":"small","count":1,"reservation":"res-9"}"#).unwrap();
        assert!(matches!(
            map_policy_to_api(&stray, None, &k, &MappingTable::default(), &twin.snapshot()),
            Err(MapError::UnresolvedBinding(_))
        ));
    }

    #[test]
    fn update_without_chain_is_unresolved() {
        let p = parse_policy(r#"{"action":"update","resource":"chain","role":"dpi","target":"vm-5"}"#).unwrap();
        assert!(matches!(
            map_policy_to_api(&p, None, &KnowledgeStore::default(), &MappingTable::default(), &TwinState::default()),
            Err(MapError::UnresolvedBinding(_))
        ));
    }

    #[test]
    fn unmapped_and_missing() {
        let table = MappingTable::default();
        let k = KnowledgeStore::default();
        let twin = TwinState::default();
        let p = parse_policy(r#"{"action":"get","resource":"vm","zone":"Domain1"}"#).unwrap();
        assert!(matches!(
            map_policy_to_api(&p, None, &k, &table, &twin),
            Err(MapError::UnmappedAction { .. })
        ));
        let p = parse_policy(r#"{"action":"create","resource":"vm","zone":"Domain1","size":"small"}"#).unwrap();
        assert_eq!(
            map_policy_to_api(&p, None, &k, &table, &twin),
            Err(MapError::MissingParameter("count".into()))
        );
        let p = parse_policy(r#"{"action":"reserve","resource":"vm","zone":"Domain1"}"#).unwrap();
        assert_eq!(
            map_policy_to_api(&p, None, &k, &table, &twin),
            Err(MapError::MissingParameter("items|size".into()))
        );
    }

    #[test]
    fn create_without_reservation_still_runs() {
        let twin = TwinHandle::default();
        let mut k = KnowledgeStore::default();
        let r = exec(&twin, &mut k, r#"{"action":"create","resource":"vm","zone":"Domain1","size":"small","count":1}"#);
        assert!(r.success);
        assert_eq!(r.produced.vm_ids, ["vm-1"]);
        assert_eq!(k.vms_for_role(GENERIC_ROLE), ["vm-1"]);
        assert_eq!(summarize_result(&r, FeedbackMode::Boolean), "True. vm_ids=[vm-1]");
    }

    #[test]
    fn expired_policy_is_skipped() {
        let twin = TwinHandle::default();
        twin.submit(|t| t.tick(3));
        let mut k = KnowledgeStore::default();
        let table = MappingTable::default();
        let meta = PolicyMetadata {
            policy_id: "pol-1".into(),
            domain: "Domain1".into(),
            expiration: Some(2),
            priority: 5,
            autonomic_permission: true,
        };
        let p = parse_policy(r#"{"action":"get","resource":"inventory","zone":"Domain1"}"#).unwrap();
        let r = Executor::new(&twin, &table, &mut k).execute_policy(&p, Some(&meta));
        assert!(!r.success);
        assert_eq!(r.message, "expired");
    }

    #[test]
    fn failures_are_in_band() {
        let twin = TwinHandle::default();
        let mut k = KnowledgeStore::default();
        exec(&twin, &mut k, r#"{"action":"create","resource":"vm","zone":"Domain1","role":"dpi","size":"medium","count":1}"#);
        twin.submit(|t| {
            t.inject_fault(&FaultSpec::Shutdown { vm: "vm-1".into() }).unwrap();
            t.inject_fault(&FaultSpec::FailNext { op: FaultOp::Start, target: "vm-1".into() }).unwrap();
        });
        let r = exec(&twin, &mut k, r#"{"action":"validate","resource":"vm","target":"dpi"}"#);
        assert!(!r.success);
        assert!(r.message.contains("vm-1 Shutdown"));
        let r = exec(&twin, &mut k, r#"{"action":"start","resource":"vm","target":"vm-1"}"#);
        assert!(!r.success);
        assert_eq!(twin.snapshot().vm("vm-1").unwrap().state, VmState::Shutdown);

        k.run = RunKind::Assurance;
        let r = exec(&twin, &mut k, r#"{"action":"delete","resource":"vm","target":"vm-1"}"#);
        assert!(r.success);
        assert!(k.bound_vms().is_empty());
    }

    #[test]
    fn relaxed_alternatives_reach_feedback() {
        let mut cfg = crate::twin::TwinConfig::default();
        cfg.domains.insert("Domain1".into(), crate::twin::Resources::new(3, 4096, 200_000));
        let twin = TwinHandle::new(TwinState::new(cfg));
        let mut k = KnowledgeStore::default();
        let r = exec(&twin, &mut k, r#"{"action":"avail","resource":"vm","zone":"Domain1","size":"large","count":1}"#);
        assert_eq!(
            summarize_result(&r, FeedbackMode::Detailed),
            "False. Available alternatives: medium×1, small×3."
        );
        assert_eq!(summarize_result(&r, FeedbackMode::Boolean), "False");
    }
}
