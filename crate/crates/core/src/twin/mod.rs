//! Simulated multi-domain cloud used both as the managed environment and as
//! the rehearsal sandbox.
//!
//! All state lives in [`TwinState`]. Time is a logical clock advanced only by
//! [`TwinState::tick`]; health checks fire and reservations expire on tick
//! boundaries. Concurrent callers go through [`TwinHandle`], which serializes
//! every command.

mod capacity;

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex, MutexGuard};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use capacity::{DomainCapacity, Flavor, FlavorTable, Resources, Size};

pub const DEFAULT_HEALTH_CHECK_PERIOD: u64 = 5;
pub const DEFAULT_RESERVATION_TTL: u64 = 20;

/// Default region capacity: 800 vCPU, 4 TB RAM, ~200 TB disk, in GB.
pub const DEFAULT_DOMAIN_CAPACITY: Resources = Resources::new(800, 4096, 200_000);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwinConfig {
    pub flavors: FlavorTable,
    pub domains: IndexMap<String, Resources>,
    /// Ticks a VM spends in `Building`. Zero means it is `Running` as soon as
    /// it is created.
    pub build_delay: u64,
    pub reservation_ttl: u64,
}

impl Default for TwinConfig {
    fn default() -> Self {
        let mut domains = IndexMap::new();
        domains.insert("Domain1".to_string(), DEFAULT_DOMAIN_CAPACITY);
        Self {
            flavors: FlavorTable::default(),
            domains,
            build_delay: 0,
            reservation_ttl: DEFAULT_RESERVATION_TTL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VmState {
    Building,
    Running,
    Shutdown,
    Deleted,
}

impl fmt::Display for VmState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VmState::Building => "Building",
            VmState::Running => "Running",
            VmState::Shutdown => "Shutdown",
            VmState::Deleted => "Deleted",
        };
        f.write_str(s)
    }
}

impl FromStr for VmState {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "Building" => Ok(VmState::Building),
            "Running" => Ok(VmState::Running),
            "Shutdown" => Ok(VmState::Shutdown),
            "Deleted" => Ok(VmState::Deleted),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VmCommand {
    Start,
    Stop,
    Delete,
}

impl VmState {
    /// The state reached by applying `cmd`, if the transition is legal.
    pub fn after(self, cmd: VmCommand) -> Option<VmState> {
        match (self, cmd) {
            (VmState::Shutdown, VmCommand::Start) => Some(VmState::Running),
            (VmState::Running, VmCommand::Stop) => Some(VmState::Shutdown),
            (VmState::Running | VmState::Shutdown, VmCommand::Delete) => Some(VmState::Deleted),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VmRecord {
    pub id: String,
    pub role: String,
    pub flavor: Size,
    pub zone: String,
    pub state: VmState,
    /// Tick at which a `Building` VM becomes `Running`.
    pub ready_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReservationItem {
    pub size: Size,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reservation {
    pub id: String,
    pub zone: String,
    /// Remaining, not yet consumed, counts.
    pub items: Vec<ReservationItem>,
    pub expires_at: u64,
}

impl Reservation {
    pub fn remaining(&self, size: Size) -> u64 {
        self.items
            .iter()
            .filter(|i| i.size == size)
            .map(|i| i.count)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ServiceState {
    Running,
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceCommand {
    Start,
    Stop,
    Run,
    Publish,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceRecord {
    pub id: String,
    pub kind: String,
    pub vm_id: String,
    pub state: ServiceState,
    pub published: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSlot {
    pub role: String,
    pub service_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub id: String,
    pub zone: String,
    pub slots: Vec<ChainSlot>,
    /// Set when a slot lost its service.
    pub degraded: bool,
}

impl ChainRecord {
    pub fn service_ids(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().filter_map(|s| s.service_id.as_deref())
    }

    fn refresh_degraded(&mut self) {
        self.degraded = self.slots.iter().any(|s| s.service_id.is_none());
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthCheck {
    pub id: String,
    pub targets: Vec<String>,
    pub period: u64,
    pub next_due: u64,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthReport {
    pub check_id: String,
    pub tick: u64,
    pub states: IndexMap<String, VmState>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotificationSink {
    pub id: String,
    pub check_id: String,
    pub name: String,
    pub delivered: Vec<HealthReport>,
}

/// Operations a fail-next fault can target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultOp {
    Start,
    Stop,
    Delete,
    Create,
    Reserve,
    Validate,
    Update,
}

impl FromStr for FaultOp {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "start" => FaultOp::Start,
            "stop" => FaultOp::Stop,
            "delete" => FaultOp::Delete,
            "create" => FaultOp::Create,
            "reserve" => FaultOp::Reserve,
            "validate" => FaultOp::Validate,
            "update" => FaultOp::Update,
            _ => return Err(()),
        })
    }
}

impl fmt::Display for FaultOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FaultOp::Start => "start",
            FaultOp::Stop => "stop",
            FaultOp::Delete => "delete",
            FaultOp::Create => "create",
            FaultOp::Reserve => "reserve",
            FaultOp::Validate => "validate",
            FaultOp::Update => "update",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "fault", rename_all = "kebab-case")]
pub enum FaultSpec {
    /// Power off a running VM out of band.
    Shutdown { vm: String },
    /// The next `op` on `target` (vm, chain or zone) fails once.
    FailNext { op: FaultOp, target: String },
}

impl FromStr for FaultSpec {
    type Err = String;

    /// `shutdown:<vm>` or `fail-next:<op>:<target>`.
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["shutdown", vm] => Ok(FaultSpec::Shutdown { vm: vm.to_string() }),
            ["fail-next", op, target] => Ok(FaultSpec::FailNext {
                op: op
                    .parse()
                    .map_err(|_| format!("unknown fault operation {op:?}"))?,
                target: target.to_string(),
            }),
            _ => Err(format!(
                "bad fault spec {s:?}; expected shutdown:<vm> or fail-next:<op>:<target>"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum TwinEvent {
    HealthReport {
        report: HealthReport,
        sinks: Vec<String>,
    },
    ReportDropped {
        check_id: String,
        tick: u64,
    },
    ReservationExpired {
        id: String,
        tick: u64,
    },
    VmReady {
        id: String,
        tick: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TwinError {
    #[error("unknown zone {0:?}")]
    UnknownZone(String),
    #[error("no flavor defined for size {0}")]
    UnknownFlavor(Size),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("insufficient capacity in {zone} for {requested}")]
    InsufficientCapacity { zone: String, requested: Resources },
    #[error("unknown reservation {0:?}")]
    UnknownReservation(String),
    #[error("reservation {reservation} does not cover {count} x {size}")]
    ReservationMismatch {
        reservation: String,
        size: Size,
        count: u64,
    },
    #[error("unknown target {0:?}")]
    UnknownTarget(String),
    #[error("illegal transition: {command:?} on {id} in state {from}")]
    IllegalTransition {
        id: String,
        from: VmState,
        command: VmCommand,
    },
    #[error("service command {command:?} not allowed on {id}")]
    IllegalServiceCommand { id: String, command: ServiceCommand },
    #[error("no running vm with role {0:?}")]
    MissingRole(String),
    #[error("unknown chain {0:?}")]
    UnknownChain(String),
    #[error("chain {chain} has no slot for role {role:?}")]
    RoleAbsent { chain: String, role: String },
    #[error("vm {0} is not running")]
    VmNotRunning(String),
    #[error("injected failure of {op} on {target}")]
    InjectedFailure { op: FaultOp, target: String },
}

/// Outcome of an availability check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Availability {
    pub available: bool,
    /// Feasible (size, count) options when the request does not fit, nearest
    /// size first, smaller sizes before larger ones at equal distance.
    pub alternatives: Vec<ReservationItem>,
}

/// Outcome of validating a set of VMs or services.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validation {
    pub matched: Vec<String>,
    /// Matched ids that are not running, with a short reason each.
    pub offending: Vec<(String, String)>,
}

impl Validation {
    pub fn ok(&self) -> bool {
        !self.matched.is_empty() && self.offending.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inventory {
    pub zone: String,
    pub capacity: DomainCapacity,
    pub flavors: FlavorTable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainDeployment {
    pub chain_id: String,
    pub service_ids: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct Counters {
    vm: u64,
    reservation: u64,
    service: u64,
    chain: u64,
    check: u64,
    sink: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ArmedFault {
    op: FaultOp,
    target: String,
}

/// The full twin state. Serializes to a canonical JSON document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwinState {
    config: TwinConfig,
    clock: u64,
    domains: IndexMap<String, DomainCapacity>,
    reservations: IndexMap<String, Reservation>,
    vms: IndexMap<String, VmRecord>,
    services: IndexMap<String, ServiceRecord>,
    chains: IndexMap<String, ChainRecord>,
    health_checks: IndexMap<String, HealthCheck>,
    notification_sinks: IndexMap<String, NotificationSink>,
    faults: Vec<ArmedFault>,
    dropped_reports: u64,
    counters: Counters,
}

impl Default for TwinState {
    fn default() -> Self {
        Self::new(TwinConfig::default())
    }
}

impl TwinState {
    pub fn new(config: TwinConfig) -> Self {
        let domains = config
            .domains
            .iter()
            .map(|(name, total)| (name.clone(), DomainCapacity::new(*total)))
            .collect();
        Self {
            config,
            clock: 0,
            domains,
            reservations: IndexMap::new(),
            vms: IndexMap::new(),
            services: IndexMap::new(),
            chains: IndexMap::new(),
            health_checks: IndexMap::new(),
            notification_sinks: IndexMap::new(),
            faults: Vec::new(),
            dropped_reports: 0,
            counters: Counters::default(),
        }
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn config(&self) -> &TwinConfig {
        &self.config
    }

    pub fn domains(&self) -> &IndexMap<String, DomainCapacity> {
        &self.domains
    }

    pub fn reservations(&self) -> &IndexMap<String, Reservation> {
        &self.reservations
    }

    pub fn vms(&self) -> &IndexMap<String, VmRecord> {
        &self.vms
    }

    pub fn vm(&self, id: &str) -> Option<&VmRecord> {
        self.vms.get(id)
    }

    pub fn services(&self) -> &IndexMap<String, ServiceRecord> {
        &self.services
    }

    pub fn chains(&self) -> &IndexMap<String, ChainRecord> {
        &self.chains
    }

    pub fn health_checks(&self) -> &IndexMap<String, HealthCheck> {
        &self.health_checks
    }

    pub fn notification_sinks(&self) -> &IndexMap<String, NotificationSink> {
        &self.notification_sinks
    }

    pub fn dropped_reports(&self) -> u64 {
        self.dropped_reports
    }

    /// True when every domain satisfies `used + reserved + free == total`.
    pub fn capacity_conserved(&self) -> bool {
        self.domains.values().all(DomainCapacity::is_conserved)
    }

    /// Referential integrity: services point at existing VMs, chain slots at
    /// existing services.
    pub fn references_intact(&self) -> bool {
        self.services.values().all(|s| {
            self.vms
                .get(&s.vm_id)
                .is_some_and(|vm| vm.state != VmState::Deleted)
        }) && self
            .chains
            .values()
            .all(|c| c.service_ids().all(|id| self.services.contains_key(id)))
    }

    /// Whether the chain has all its slots filled by running services on
    /// running VMs.
    pub fn chain_intact(&self, chain_id: &str) -> bool {
        let Some(chain) = self.chains.get(chain_id) else {
            return false;
        };
        !chain.degraded
            && chain.slots.iter().all(|slot| {
                slot.service_id
                    .as_ref()
                    .and_then(|id| self.services.get(id))
                    .is_some_and(|svc| {
                        svc.state == ServiceState::Running
                            && self
                                .vms
                                .get(&svc.vm_id)
                                .is_some_and(|vm| vm.state == VmState::Running)
                    })
            })
    }

    /// Canonical JSON snapshot.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("twin state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let state: TwinState = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if !state.capacity_conserved() {
            return Err("snapshot violates capacity conservation".into());
        }
        Ok(state)
    }

    fn next_id(&mut self, prefix: &str) -> String {
        let counter = match prefix {
            "vm" => &mut self.counters.vm,
            "res" => &mut self.counters.reservation,
            "svc" => &mut self.counters.service,
            "chain" => &mut self.counters.chain,
            "hc" => &mut self.counters.check,
            _ => &mut self.counters.sink,
        };
        *counter += 1;
        format!("{prefix}-{counter}")
    }

    fn domain_mut(&mut self, zone: &str) -> Result<&mut DomainCapacity, TwinError> {
        self.domains
            .get_mut(zone)
            .ok_or_else(|| TwinError::UnknownZone(zone.to_string()))
    }

    fn flavor(&self, size: Size) -> Result<Flavor, TwinError> {
        self.config
            .flavors
            .get(size)
            .ok_or(TwinError::UnknownFlavor(size))
    }

    /// Consumes an armed fail-next fault for (op, target), if any.
    fn take_fault(&mut self, op: FaultOp, target: &str) -> Result<(), TwinError> {
        if let Some(pos) = self
            .faults
            .iter()
            .position(|f| f.op == op && f.target == target)
        {
            self.faults.remove(pos);
            return Err(TwinError::InjectedFailure {
                op,
                target: target.to_string(),
            });
        }
        Ok(())
    }

    pub fn get_inventory(&self, zone: &str) -> Result<Inventory, TwinError> {
        let capacity = self
            .domains
            .get(zone)
            .ok_or_else(|| TwinError::UnknownZone(zone.to_string()))?;
        Ok(Inventory {
            zone: zone.to_string(),
            capacity: capacity.clone(),
            flavors: self.config.flavors.clone(),
        })
    }

    pub fn check_availability(
        &self,
        zone: &str,
        size: Size,
        count: u64,
    ) -> Result<Availability, TwinError> {
        if count == 0 {
            return Err(TwinError::InvalidArgument("count must be at least 1".into()));
        }
        let free = self
            .domains
            .get(zone)
            .ok_or_else(|| TwinError::UnknownZone(zone.to_string()))?
            .free;
        let flavor = self.flavor(size)?;
        if flavor.times(count).fits_in(free) {
            return Ok(Availability {
                available: true,
                alternatives: Vec::new(),
            });
        }
        let mut alternatives: Vec<ReservationItem> = self
            .config
            .flavors
            .0
            .iter()
            .map(|(s, f)| ReservationItem {
                size: *s,
                count: free.copies_of(*f),
            })
            .filter(|alt| alt.count > 0)
            .collect();
        alternatives.sort_by_key(|alt| ((alt.size.rank() - size.rank()).abs(), alt.size.rank()));
        Ok(Availability {
            available: false,
            alternatives,
        })
    }

    /// Moves capacity for every item from free to reserved, or for none.
    pub fn reserve(
        &mut self,
        zone: &str,
        items: &[ReservationItem],
        ttl: Option<u64>,
    ) -> Result<String, TwinError> {
        if items.is_empty() || items.iter().any(|i| i.count == 0) {
            return Err(TwinError::InvalidArgument(
                "reservation needs at least one item with count >= 1".into(),
            ));
        }
        let mut amount = Resources::ZERO;
        for item in items {
            amount = amount + self.flavor(item.size)?.times(item.count);
        }
        self.domain_mut(zone)?;
        self.take_fault(FaultOp::Reserve, zone)?;
        let domain = self.domain_mut(zone)?;
        if !domain.reserve_from_free(amount) {
            return Err(TwinError::InsufficientCapacity {
                zone: zone.to_string(),
                requested: amount,
            });
        }
        let id = self.next_id("res");
        let expires_at = self.clock + ttl.unwrap_or(self.config.reservation_ttl);
        self.reservations.insert(
            id.clone(),
            Reservation {
                id: id.clone(),
                zone: zone.to_string(),
                items: items.to_vec(),
                expires_at,
            },
        );
        Ok(id)
    }

    pub fn create_vm(
        &mut self,
        zone: &str,
        role: &str,
        size: Size,
        count: u64,
        reservation: Option<&str>,
    ) -> Result<Vec<String>, TwinError> {
        if count == 0 {
            return Err(TwinError::InvalidArgument("count must be at least 1".into()));
        }
        let flavor = self.flavor(size)?;
        let amount = flavor.times(count);
        self.domain_mut(zone)?;
        if let Some(res_id) = reservation {
            let res = self
                .reservations
                .get(res_id)
                .ok_or_else(|| TwinError::UnknownReservation(res_id.to_string()))?;
            if res.zone != zone || res.remaining(size) < count {
                return Err(TwinError::ReservationMismatch {
                    reservation: res_id.to_string(),
                    size,
                    count,
                });
            }
        } else if !amount.fits_in(self.domains[zone].free) {
            return Err(TwinError::InsufficientCapacity {
                zone: zone.to_string(),
                requested: amount,
            });
        }
        self.take_fault(FaultOp::Create, zone)?;

        match reservation {
            Some(res_id) => {
                let res = self.reservations.get_mut(res_id).expect("checked above");
                let mut left = count;
                for item in res.items.iter_mut().filter(|i| i.size == size) {
                    let take = left.min(item.count);
                    item.count -= take;
                    left -= take;
                }
                res.items.retain(|i| i.count > 0);
                if res.items.is_empty() {
                    self.reservations.shift_remove(res_id);
                }
                self.domain_mut(zone)?.use_reserved(amount);
            }
            None => {
                self.domain_mut(zone)?.allocate_from_free(amount);
            }
        }

        let building = self.config.build_delay > 0;
        let ready_at = self.clock + self.config.build_delay;
        let mut ids = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let id = self.next_id("vm");
            self.vms.insert(
                id.clone(),
                VmRecord {
                    id: id.clone(),
                    role: role.to_string(),
                    flavor: size,
                    zone: zone.to_string(),
                    state: if building {
                        VmState::Building
                    } else {
                        VmState::Running
                    },
                    ready_at,
                },
            );
            ids.push(id);
        }
        Ok(ids)
    }

    /// Resolves a target list where each entry is either a VM id or a role
    /// name. Unknown ids are reported as offending.
    pub fn validate_vms(&mut self, targets: &[String]) -> Validation {
        let mut matched = Vec::new();
        let mut offending = Vec::new();
        for target in targets {
            if let Some(vm) = self.vms.get(target) {
                matched.push(vm.id.clone());
            } else {
                let by_role: Vec<String> = self
                    .vms
                    .values()
                    .filter(|vm| vm.role == *target && vm.state != VmState::Deleted)
                    .map(|vm| vm.id.clone())
                    .collect();
                if by_role.is_empty() {
                    offending.push((target.clone(), "not found".to_string()));
                }
                matched.extend(by_role);
            }
        }
        matched.dedup();
        for id in &matched {
            if self.take_fault(FaultOp::Validate, id).is_err() {
                offending.push((id.clone(), "injected failure".to_string()));
                continue;
            }
            let state = self.vms[id].state;
            if state != VmState::Running {
                offending.push((id.clone(), state.to_string()));
            }
        }
        Validation { matched, offending }
    }

    pub fn vm_command(&mut self, id: &str, cmd: VmCommand) -> Result<(), TwinError> {
        let vm = self
            .vms
            .get(id)
            .ok_or_else(|| TwinError::UnknownTarget(id.to_string()))?;
        let from = vm.state;
        let to = from.after(cmd).ok_or(TwinError::IllegalTransition {
            id: id.to_string(),
            from,
            command: cmd,
        })?;
        let op = match cmd {
            VmCommand::Start => FaultOp::Start,
            VmCommand::Stop => FaultOp::Stop,
            VmCommand::Delete => FaultOp::Delete,
        };
        self.take_fault(op, id)?;

        let vm = self.vms.get_mut(id).expect("checked above");
        vm.state = to;
        if to == VmState::Deleted {
            let (zone, flavor) = (vm.zone.clone(), vm.flavor);
            let amount = self.flavor(flavor)?;
            self.domain_mut(&zone)?.release_used(amount);
            self.cascade_delete(id);
        }
        Ok(())
    }

    fn cascade_delete(&mut self, vm_id: &str) {
        let gone: Vec<String> = self
            .services
            .values()
            .filter(|s| s.vm_id == vm_id)
            .map(|s| s.id.clone())
            .collect();
        for svc in &gone {
            self.services.shift_remove(svc);
        }
        for chain in self.chains.values_mut() {
            for slot in &mut chain.slots {
                if slot.service_id.as_ref().is_some_and(|s| gone.contains(s)) {
                    slot.service_id = None;
                }
            }
            chain.refresh_degraded();
        }
        for check in self.health_checks.values_mut() {
            check.targets.retain(|t| t != vm_id);
            if check.targets.is_empty() {
                check.active = false;
            }
        }
        self.faults.retain(|f| f.target != vm_id);
    }

    /// Links one service per running VM of each role, in role order. When
    /// `only` is given, VMs outside it are ignored.
    pub fn deploy_chain(
        &mut self,
        zone: &str,
        roles: &[String],
        only: Option<&[String]>,
    ) -> Result<ChainDeployment, TwinError> {
        if roles.is_empty() {
            return Err(TwinError::InvalidArgument("chain needs at least one role".into()));
        }
        if !self.domains.contains_key(zone) {
            return Err(TwinError::UnknownZone(zone.to_string()));
        }
        let mut per_role: Vec<(String, Vec<String>)> = Vec::new();
        for role in roles {
            let vms: Vec<String> = self
                .vms
                .values()
                .filter(|vm| {
                    vm.role == *role
                        && vm.zone == zone
                        && vm.state == VmState::Running
                        && only.is_none_or(|ids| ids.contains(&vm.id))
                })
                .map(|vm| vm.id.clone())
                .collect();
            if vms.is_empty() {
                return Err(TwinError::MissingRole(role.clone()));
            }
            per_role.push((role.clone(), vms));
        }
        let chain_id = self.next_id("chain");
        let mut slots = Vec::new();
        let mut service_ids = Vec::new();
        for (role, vms) in per_role {
            for vm_id in vms {
                let svc = self.add_service(&role, &vm_id);
                slots.push(ChainSlot {
                    role: role.clone(),
                    service_id: Some(svc.clone()),
                });
                service_ids.push(svc);
            }
        }
        self.chains.insert(
            chain_id.clone(),
            ChainRecord {
                id: chain_id.clone(),
                zone: zone.to_string(),
                slots,
                degraded: false,
            },
        );
        Ok(ChainDeployment {
            chain_id,
            service_ids,
        })
    }

    fn add_service(&mut self, kind: &str, vm_id: &str) -> String {
        let id = self.next_id("svc");
        self.services.insert(
            id.clone(),
            ServiceRecord {
                id: id.clone(),
                kind: kind.to_string(),
                vm_id: vm_id.to_string(),
                state: ServiceState::Running,
                published: false,
            },
        );
        id
    }

    /// Rebinds the role's slot (the first empty one, else the first one) to
    /// a new service on `vm_id`.
    pub fn update_chain(
        &mut self,
        chain_id: &str,
        role: &str,
        vm_id: &str,
    ) -> Result<String, TwinError> {
        let chain = self
            .chains
            .get(chain_id)
            .ok_or_else(|| TwinError::UnknownChain(chain_id.to_string()))?;
        let slot_idx = chain
            .slots
            .iter()
            .position(|s| s.role == role && s.service_id.is_none())
            .or_else(|| chain.slots.iter().position(|s| s.role == role))
            .ok_or_else(|| TwinError::RoleAbsent {
                chain: chain_id.to_string(),
                role: role.to_string(),
            })?;
        match self.vms.get(vm_id) {
            None => return Err(TwinError::UnknownTarget(vm_id.to_string())),
            Some(vm) if vm.state != VmState::Running => {
                return Err(TwinError::VmNotRunning(vm_id.to_string()))
            }
            Some(_) => {}
        }
        self.take_fault(FaultOp::Update, chain_id)?;

        let svc = self.add_service(role, vm_id);
        let chain = self.chains.get_mut(chain_id).expect("checked above");
        if let Some(old) = chain.slots[slot_idx].service_id.replace(svc.clone()) {
            self.services.shift_remove(&old);
        }
        chain.refresh_degraded();
        Ok(svc)
    }

    pub fn schedule_health_check(
        &mut self,
        targets: &[String],
        period: u64,
    ) -> Result<String, TwinError> {
        if period == 0 {
            return Err(TwinError::InvalidArgument("period must be at least 1".into()));
        }
        if targets.is_empty() {
            return Err(TwinError::InvalidArgument("health check needs a target".into()));
        }
        for t in targets {
            match self.vms.get(t) {
                Some(vm) if vm.state != VmState::Deleted => {}
                _ => return Err(TwinError::UnknownTarget(t.clone())),
            }
        }
        let id = self.next_id("hc");
        self.health_checks.insert(
            id.clone(),
            HealthCheck {
                id: id.clone(),
                targets: targets.to_vec(),
                period,
                next_due: self.clock + period,
                active: true,
            },
        );
        Ok(id)
    }

    pub fn set_notification(&mut self, check_id: &str, sink: &str) -> Result<String, TwinError> {
        if !self.health_checks.contains_key(check_id) {
            return Err(TwinError::UnknownTarget(check_id.to_string()));
        }
        let id = self.next_id("sink");
        self.notification_sinks.insert(
            id.clone(),
            NotificationSink {
                id: id.clone(),
                check_id: check_id.to_string(),
                name: sink.to_string(),
                delivered: Vec::new(),
            },
        );
        Ok(id)
    }

    pub fn discover_vms(&self, zone: &str, role: Option<&str>) -> Result<Vec<String>, TwinError> {
        if !self.domains.contains_key(zone) {
            return Err(TwinError::UnknownZone(zone.to_string()));
        }
        Ok(self
            .vms
            .values()
            .filter(|vm| {
                vm.zone == zone
                    && vm.state != VmState::Deleted
                    && role.is_none_or(|r| vm.role == r)
            })
            .map(|vm| vm.id.clone())
            .collect())
    }

    pub fn discover_services(
        &self,
        zone: &str,
        kind: Option<&str>,
    ) -> Result<Vec<String>, TwinError> {
        if !self.domains.contains_key(zone) {
            return Err(TwinError::UnknownZone(zone.to_string()));
        }
        Ok(self
            .services
            .values()
            .filter(|s| {
                kind.is_none_or(|k| s.kind == k)
                    && self.vms.get(&s.vm_id).is_some_and(|vm| vm.zone == zone)
            })
            .map(|s| s.id.clone())
            .collect())
    }

    pub fn collect_states(&self, targets: &[String]) -> Result<IndexMap<String, VmState>, TwinError> {
        targets
            .iter()
            .map(|t| {
                self.vms
                    .get(t)
                    .map(|vm| (t.clone(), vm.state))
                    .ok_or_else(|| TwinError::UnknownTarget(t.clone()))
            })
            .collect()
    }

    pub fn service_command(&mut self, id: &str, cmd: ServiceCommand) -> Result<(), TwinError> {
        let svc = self
            .services
            .get(id)
            .ok_or_else(|| TwinError::UnknownTarget(id.to_string()))?;
        let vm_running = self
            .vms
            .get(&svc.vm_id)
            .is_some_and(|vm| vm.state == VmState::Running);
        let illegal = TwinError::IllegalServiceCommand {
            id: id.to_string(),
            command: cmd,
        };
        let svc = self.services.get_mut(id).expect("checked above");
        match (cmd, svc.state) {
            (ServiceCommand::Start | ServiceCommand::Run, ServiceState::Stopped) if vm_running => {
                svc.state = ServiceState::Running;
            }
            (ServiceCommand::Run, ServiceState::Running) => {}
            (ServiceCommand::Stop, ServiceState::Running) => svc.state = ServiceState::Stopped,
            (ServiceCommand::Publish, ServiceState::Running) => svc.published = true,
            _ => return Err(illegal),
        }
        Ok(())
    }

    pub fn validate_services(&self, ids: &[String]) -> Validation {
        let mut offending = Vec::new();
        for id in ids {
            match self.services.get(id) {
                None => offending.push((id.clone(), "not found".to_string())),
                Some(s) if s.state != ServiceState::Running => {
                    offending.push((id.clone(), "Stopped".to_string()))
                }
                Some(_) => {}
            }
        }
        Validation {
            matched: ids.to_vec(),
            offending,
        }
    }

    pub fn inject_fault(&mut self, spec: &FaultSpec) -> Result<(), TwinError> {
        match spec {
            FaultSpec::Shutdown { vm } => {
                let record = self
                    .vms
                    .get_mut(vm)
                    .filter(|r| r.state != VmState::Deleted)
                    .ok_or_else(|| TwinError::UnknownTarget(vm.clone()))?;
                if record.state != VmState::Running {
                    return Err(TwinError::IllegalTransition {
                        id: vm.clone(),
                        from: record.state,
                        command: VmCommand::Stop,
                    });
                }
                record.state = VmState::Shutdown;
            }
            FaultSpec::FailNext { op, target } => {
                let exists = self
                    .vms
                    .get(target)
                    .is_some_and(|vm| vm.state != VmState::Deleted)
                    || self.domains.contains_key(target)
                    || self.chains.contains_key(target);
                if !exists {
                    return Err(TwinError::UnknownTarget(target.clone()));
                }
                self.faults.push(ArmedFault {
                    op: *op,
                    target: target.clone(),
                });
            }
        }
        Ok(())
    }

    /// Advances the clock `n` ticks, one at a time. Per tick: builds finish,
    /// reservations expire, then due health checks fire in creation order.
    pub fn tick(&mut self, n: u64) -> Vec<TwinEvent> {
        let mut events = Vec::new();
        for _ in 0..n {
            self.clock += 1;
            let now = self.clock;

            for vm in self.vms.values_mut() {
                if vm.state == VmState::Building && vm.ready_at <= now {
                    vm.state = VmState::Running;
                    events.push(TwinEvent::VmReady {
                        id: vm.id.clone(),
                        tick: now,
                    });
                }
            }

            let expired: Vec<String> = self
                .reservations
                .values()
                .filter(|r| r.expires_at <= now)
                .map(|r| r.id.clone())
                .collect();
            for id in expired {
                let res = self.reservations.shift_remove(&id).expect("listed above");
                let mut amount = Resources::ZERO;
                for item in &res.items {
                    amount = amount + self.config.flavors.get(item.size).unwrap_or_default().times(item.count);
                }
                if let Some(domain) = self.domains.get_mut(&res.zone) {
                    domain.release_reserved(amount);
                }
                events.push(TwinEvent::ReservationExpired { id, tick: now });
            }

            let due: Vec<String> = self
                .health_checks
                .values()
                .filter(|c| c.active && c.next_due <= now)
                .map(|c| c.id.clone())
                .collect();
            for check_id in due {
                let check = self.health_checks.get_mut(&check_id).expect("listed above");
                check.next_due = now + check.period;
                let states = check
                    .targets
                    .iter()
                    .map(|t| (t.clone(), self.vms.get(t).map_or(VmState::Deleted, |vm| vm.state)))
                    .collect();
                let report = HealthReport {
                    check_id: check_id.clone(),
                    tick: now,
                    states,
                };
                let sinks: Vec<String> = self
                    .notification_sinks
                    .values_mut()
                    .filter(|s| s.check_id == check_id)
                    .map(|s| {
                        s.delivered.push(report.clone());
                        s.id.clone()
                    })
                    .collect();
                if sinks.is_empty() {
                    self.dropped_reports += 1;
                    events.push(TwinEvent::ReportDropped {
                        check_id,
                        tick: now,
                    });
                } else {
                    events.push(TwinEvent::HealthReport { report, sinks });
                }
            }
        }
        events
    }
}

/// Shared handle; every command runs under one lock, which serializes
/// concurrent submitters.
#[derive(Debug, Clone, Default)]
pub struct TwinHandle {
    inner: Arc<Mutex<TwinState>>,
}

impl TwinHandle {
    pub fn new(state: TwinState) -> Self {
        Self {
            inner: Arc::new(Mutex::new(state)),
        }
    }

    pub fn lock(&self) -> MutexGuard<'_, TwinState> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Runs one command against the state.
    pub fn submit<T>(&self, command: impl FnOnce(&mut TwinState) -> T) -> T {
        command(&mut self.lock())
    }

    /// Immutable copy of the current state.
    pub fn snapshot(&self) -> TwinState {
        self.lock().clone()
    }

    pub fn replace(&self, state: TwinState) {
        *self.lock() = state;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(list: &[(Size, u64)]) -> Vec<ReservationItem> {
        list.iter()
            .map(|(size, count)| ReservationItem {
                size: *size,
                count: *count,
            })
            .collect()
    }

    fn tiny_zone(vcpu: u64) -> TwinState {
        let mut cfg = TwinConfig::default();
        cfg.domains.insert("Tiny".into(), Resources::new(vcpu, 4096, 200_000));
        TwinState::new(cfg)
    }

    #[test]
    fn fresh_inventory() {
        let twin = TwinState::default();
        let inv = twin.get_inventory("Domain1").unwrap();
        assert_eq!(inv.capacity.free, Resources::new(800, 4096, 200_000));
        assert_eq!(
            twin.get_inventory("Nowhere").unwrap_err(),
            TwinError::UnknownZone("Nowhere".into())
        );
    }

    #[test]
    fn one_small_vm_takes_one_vcpu() {
        let mut twin = TwinState::default();
        twin.create_vm("Domain1", "generic", Size::Small, 1, None).unwrap();
        assert_eq!(twin.get_inventory("Domain1").unwrap().capacity.free.vcpu, 799);
    }

    #[test]
    fn availability_and_alternatives() {
        let twin = TwinState::default();
        assert!(twin.check_availability("Domain1", Size::Small, 1).unwrap().available);
        assert!(matches!(
            twin.check_availability("Domain1", Size::Small, 0),
            Err(TwinError::InvalidArgument(_))
        ));

        let tiny = tiny_zone(3);
        let avail = tiny.check_availability("Tiny", Size::Large, 1).unwrap();
        assert!(!avail.available);
        assert_eq!(avail.alternatives, items(&[(Size::Medium, 1), (Size::Small, 3)]));
    }

    #[test]
    fn reserve_bundle_and_expire() {
        let mut twin = TwinState::default();
        let id = twin
            .reserve("Domain1", &items(&[(Size::Medium, 2), (Size::Small, 2)]), None)
            .unwrap();
        assert_eq!(id, "res-1");
        assert_eq!(twin.domains()["Domain1"].reserved.vcpu, 6);

        let mut short = TwinState::default();
        short.reserve("Domain1", &items(&[(Size::Small, 1)]), Some(3)).unwrap();
        assert!(short.tick(2).is_empty());
        let events = short.tick(1);
        assert_eq!(
            events,
            vec![TwinEvent::ReservationExpired {
                id: "res-1".into(),
                tick: 3
            }]
        );
        assert_eq!(short.domains()["Domain1"].free, DEFAULT_DOMAIN_CAPACITY);
    }

    #[test]
    fn reserve_exhaustion_leaves_state_untouched() {
        let mut twin = TwinState::default();
        let bundle = items(&[(Size::Medium, 2), (Size::Small, 2)]);
        let mut ok = 0;
        let err = loop {
            let before = twin.clone();
            match twin.reserve("Domain1", &bundle, None) {
                Ok(_) => ok += 1,
                Err(e) => {
                    assert_eq!(twin, before);
                    break e;
                }
            }
            assert!(ok <= 200);
        };
        // 800 vCPU / 6 per bundle.
        assert_eq!(ok, 133);
        assert!(matches!(err, TwinError::InsufficientCapacity { .. }));
    }

    #[test]
    fn create_from_reservation() {
        let mut twin = TwinState::default();
        let res = twin
            .reserve("Domain1", &items(&[(Size::Medium, 2), (Size::Small, 2)]), None)
            .unwrap();
        let dpi = twin.create_vm("Domain1", "dpi", Size::Medium, 1, Some(&res)).unwrap();
        let lb = twin
            .create_vm("Domain1", "load-balancer", Size::Medium, 1, Some(&res))
            .unwrap();
        assert_eq!((dpi[0].as_str(), lb[0].as_str()), ("vm-1", "vm-2"));
        assert_eq!(twin.reservations()[&res].remaining(Size::Medium), 0);
        assert!(matches!(
            twin.create_vm("Domain1", "dpi", Size::Medium, 1, Some(&res)),
            Err(TwinError::ReservationMismatch { .. })
        ));
        let web = twin.create_vm("Domain1", "web", Size::Small, 2, Some(&res)).unwrap();
        assert_eq!(web, vec!["vm-3", "vm-4"]);
        assert!(twin.reservations().is_empty());
        assert!(twin.vms().values().all(|vm| vm.state == VmState::Running));
        assert_eq!(twin.domains()["Domain1"].used.vcpu, 6);
        assert_eq!(twin.domains()["Domain1"].reserved.vcpu, 0);
        assert!(matches!(
            twin.create_vm("Domain1", "x", Size::Large, 1000, None),
            Err(TwinError::InsufficientCapacity { .. })
        ));
    }

    fn use_case() -> TwinState {
        let mut twin = TwinState::default();
        twin.create_vm("Domain1", "dpi", Size::Medium, 1, None).unwrap();
        twin.create_vm("Domain1", "load-balancer", Size::Medium, 1, None).unwrap();
        twin.create_vm("Domain1", "web", Size::Small, 2, None).unwrap();
        twin
    }

    fn roles(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn validate_and_vm_commands() {
        let mut twin = use_case();
        let all = roles(&["vm-1", "vm-2", "vm-3", "vm-4"]);
        assert!(twin.validate_vms(&all).ok());
        twin.inject_fault(&FaultSpec::Shutdown { vm: "vm-1".into() }).unwrap();
        let v = twin.validate_vms(&all);
        assert!(!v.ok());
        assert_eq!(v.offending, vec![("vm-1".to_string(), "Shutdown".to_string())]);
        assert!(!twin.validate_vms(&roles(&["nothing"])).ok());
        assert!(!twin.validate_vms(&[]).ok());

        twin.vm_command("vm-1", VmCommand::Start).unwrap();
        assert_eq!(twin.vm("vm-1").unwrap().state, VmState::Running);

        twin.inject_fault(&FaultSpec::Shutdown { vm: "vm-1".into() }).unwrap();
        twin.inject_fault(&FaultSpec::FailNext {
            op: FaultOp::Start,
            target: "vm-1".into(),
        })
        .unwrap();
        assert!(matches!(
            twin.vm_command("vm-1", VmCommand::Start),
            Err(TwinError::InjectedFailure { .. })
        ));
        assert_eq!(twin.vm("vm-1").unwrap().state, VmState::Shutdown);
        twin.vm_command("vm-1", VmCommand::Start).unwrap();

        twin.vm_command("vm-1", VmCommand::Delete).unwrap();
        assert!(matches!(
            twin.vm_command("vm-1", VmCommand::Start),
            Err(TwinError::IllegalTransition { .. })
        ));
        assert_eq!(
            twin.inject_fault(&FaultSpec::Shutdown { vm: "vm-1".into() }),
            Err(TwinError::UnknownTarget("vm-1".into()))
        );
        assert_eq!(twin.domains()["Domain1"].used.vcpu, 4);
    }

    #[test]
    fn chains_deploy_degrade_and_update() {
        let mut twin = use_case();
        let chain_roles = roles(&["dpi", "load-balancer", "web"]);
        let dep = twin.deploy_chain("Domain1", &chain_roles, None).unwrap();
        assert_eq!(dep.service_ids.len(), 4);
        assert!(twin.chain_intact(&dep.chain_id));
        let again = twin.deploy_chain("Domain1", &chain_roles, None).unwrap();
        assert_ne!(again.chain_id, dep.chain_id);

        twin.vm_command("vm-1", VmCommand::Delete).unwrap();
        assert!(twin.chains()[&dep.chain_id].degraded);
        assert!(twin.references_intact());

        let new = twin.create_vm("Domain1", "dpi", Size::Medium, 1, None).unwrap();
        twin.update_chain(&dep.chain_id, "dpi", &new[0]).unwrap();
        assert!(twin.chain_intact(&dep.chain_id));
        assert_eq!(
            twin.update_chain("chain-9", "dpi", &new[0]),
            Err(TwinError::UnknownChain("chain-9".into()))
        );
        twin.vm_command(&new[0], VmCommand::Stop).unwrap();
        assert_eq!(
            twin.update_chain(&dep.chain_id, "dpi", &new[0]),
            Err(TwinError::VmNotRunning(new[0].clone()))
        );
        assert!(matches!(
            twin.update_chain(&dep.chain_id, "cache", "vm-2"),
            Err(TwinError::RoleAbsent { .. })
        ));
    }

    #[test]
    fn deploy_requires_every_role() {
        let mut twin = TwinState::default();
        twin.create_vm("Domain1", "dpi", Size::Medium, 1, None).unwrap();
        assert_eq!(
            twin.deploy_chain("Domain1", &roles(&["dpi", "web"]), None),
            Err(TwinError::MissingRole("web".into()))
        );
    }

    #[test]
    fn health_checks_fire_on_period() {
        let mut twin = use_case();
        let all = roles(&["vm-1", "vm-2", "vm-3", "vm-4"]);
        let hc = twin.schedule_health_check(&all, 5).unwrap();
        assert!(twin.tick(4).is_empty());
        assert!(matches!(twin.tick(1).as_slice(), [TwinEvent::ReportDropped { .. }]));
        assert_eq!(twin.dropped_reports(), 1);

        let sink = twin.set_notification(&hc, "app-management").unwrap();
        let events = twin.tick(5);
        match events.as_slice() {
            [TwinEvent::HealthReport { report, sinks }] => {
                assert_eq!(report.tick, 10);
                assert_eq!(sinks, &vec![sink.clone()]);
                assert_eq!(report.states.len(), 4);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(twin.notification_sinks()[&sink].delivered.len(), 1);
        assert_eq!(twin.tick(10).len(), 2);
        assert!(matches!(
            twin.schedule_health_check(&roles(&["vm-77"]), 5),
            Err(TwinError::UnknownTarget(_))
        ));
    }

    #[test]
    fn build_delay_keeps_vms_building() {
        let mut cfg = TwinConfig::default();
        cfg.build_delay = 2;
        let mut twin = TwinState::new(cfg);
        let ids = twin.create_vm("Domain1", "web", Size::Small, 1, None).unwrap();
        assert_eq!(twin.vm(&ids[0]).unwrap().state, VmState::Building);
        assert!(!twin.validate_vms(&ids).ok());
        assert!(twin.tick(1).is_empty());
        assert_eq!(twin.tick(1).len(), 1);
        assert!(twin.validate_vms(&ids).ok());
    }

    #[test]
    fn services_commands() {
        let mut twin = use_case();
        let dep = twin
            .deploy_chain("Domain1", &roles(&["web"]), None)
            .unwrap();
        let svc = dep.service_ids[0].clone();
        twin.service_command(&svc, ServiceCommand::Stop).unwrap();
        assert!(!twin.validate_services(&[svc.clone()]).ok());
        assert!(twin.service_command(&svc, ServiceCommand::Publish).is_err());
        twin.service_command(&svc, ServiceCommand::Run).unwrap();
        twin.service_command(&svc, ServiceCommand::Publish).unwrap();
        assert!(twin.services()[&svc].published);
        assert_eq!(twin.discover_services("Domain1", Some("web")).unwrap().len(), 2);
        assert_eq!(twin.discover_vms("Domain1", Some("dpi")).unwrap(), vec!["vm-1"]);
    }

    #[test]
    fn snapshot_round_trip() {
        let mut twin = use_case();
        twin.schedule_health_check(&roles(&["vm-1"]), 5).unwrap();
        let json = twin.to_json();
        let back = TwinState::from_json(&json).unwrap();
        assert_eq!(back, twin);
        assert_eq!(back.to_json(), json);
    }

    #[test]
    fn fault_spec_parsing() {
        assert_eq!(
            "shutdown:vm-1".parse::<FaultSpec>().unwrap(),
            FaultSpec::Shutdown { vm: "vm-1".into() }
        );
        assert_eq!(
            "fail-next:start:vm-1".parse::<FaultSpec>().unwrap(),
            FaultSpec::FailNext {
                op: FaultOp::Start,
                target: "vm-1".into()
            }
        );
        assert!("explode".parse::<FaultSpec>().is_err());
    }
}
