//! Plan state and the progressive next-policy walk.

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::executor::feedback::Feedback;
use crate::policy::{ActionKind, ConstraintValue, Policy};
use crate::twin::{ReservationItem, Size, DEFAULT_HEALTH_CHECK_PERIOD};

use super::entities::{normalize_types, EntitySet, IntentType, GENERIC_ROLE};
use super::templates::{Expansion, ParamValue, StepTemplate, TemplateSet};
use super::OracleError;

pub const DEFAULT_SINK: &str = "app-management";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSettings {
    pub period: u64,
    pub sink: String,
}

impl Default for PlanSettings {
    fn default() -> Self {
        Self {
            period: DEFAULT_HEALTH_CHECK_PERIOD,
            sink: DEFAULT_SINK.to_string(),
        }
    }
}

/// Observed divergence fed to an assurance plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriftInfo {
    pub role: String,
    pub vm_id: String,
    pub observed: String,
    pub expected: String,
}

impl DriftInfo {
    pub fn message(&self) -> String {
        format!(
            "The state of the {} VM {} is {}, expected {}. Fix the intent.",
            self.role, self.vm_id, self.observed, self.expected
        )
    }

    pub fn parse(text: &str) -> Option<DriftInfo> {
        use std::sync::OnceLock;
        static RE: OnceLock<Regex> = OnceLock::new();
        let re = RE.get_or_init(|| {
            Regex::new(r"The state of the (\S+) VM (\S+) is (\w+), expected (\w+)\.").unwrap()
        });
        let c = re.captures(text)?;
        Some(DriftInfo {
            role: c[1].to_string(),
            vm_id: c[2].to_string(),
            observed: c[3].to_string(),
            expected: c[4].to_string(),
        })
    }
}

/// What the planner wants next.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Emit(Policy),
    End,
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct PlanStep {
    template: StepTemplate,
    size: Option<Size>,
    count: Option<u64>,
    role: Option<String>,
}

impl PlanStep {
    fn once(template: &StepTemplate) -> Self {
        Self {
            template: template.clone(),
            size: None,
            count: None,
            role: None,
        }
    }
}

const MAX_RELAXATIONS_PER_STEP: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanState {
    types: Vec<IntentType>,
    entities: EntitySet,
    settings: PlanSettings,
    drift: Option<DriftInfo>,
    drift_size: Option<Size>,
    steps: Vec<PlanStep>,
    replace: Vec<PlanStep>,
    cursor: usize,
    awaiting: bool,
    relax: IndexMap<Size, Size>,
    relaxations_here: usize,
    created_vms: Vec<String>,
    checks: Vec<String>,
    discovered_vms: Vec<String>,
    discovered_services: Vec<String>,
    finished: Option<Decision>,
}

const KNOWN_SLOTS: &[&str] = &[
    "$zone",
    "$size",
    "$count",
    "$role",
    "$items",
    "$chain",
    "$created_vms",
    "$check",
    "$sink",
    "$period",
    "$discovered_vms",
    "$discovered_services",
    "$drift_vm",
    "$drift_role",
    "$drift_size",
    "$drift_items",
];

fn check_slots(step: &StepTemplate) -> Result<(), OracleError> {
    for v in step.params.values() {
        if let ParamValue::Text(t) = v {
            if t.starts_with('$') && !KNOWN_SLOTS.contains(&t.as_str()) {
                return Err(OracleError::BadTemplates(format!(
                    "step {} uses unknown slot {t}",
                    step.id
                )));
            }
        }
    }
    Ok(())
}

impl PlanState {
    fn blank(types: &[IntentType], entities: &EntitySet, settings: &PlanSettings) -> Self {
        Self {
            types: normalize_types(types),
            entities: entities.clone(),
            settings: settings.clone(),
            drift: None,
            drift_size: None,
            steps: Vec::new(),
            replace: Vec::new(),
            cursor: 0,
            awaiting: false,
            relax: IndexMap::new(),
            relaxations_here: 0,
            created_vms: Vec::new(),
            checks: Vec::new(),
            discovered_vms: Vec::new(),
            discovered_services: Vec::new(),
            finished: None,
        }
    }

    /// Number of steps currently planned, including spliced ones.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// The (action, resource) sequence currently planned.
    pub fn outline(&self) -> Vec<String> {
        self.steps
            .iter()
            .map(|s| format!("{} {}", s.template.action, s.template.resource))
            .collect()
    }

    pub fn next_policy(&mut self, last: Option<&Feedback>) -> Decision {
        if let Some(done) = &self.finished {
            return done.clone();
        }
        if self.awaiting {
            let Some(fb) = last else {
                return self.finish(Decision::Error("missing execution result".into()));
            };
            self.awaiting = false;
            if fb.success {
                self.absorb(fb);
                self.cursor += 1;
                self.relaxations_here = 0;
            } else if let Some(err) = self.on_failure(fb) {
                return self.finish(Decision::Error(err));
            }
        }
        if self.cursor >= self.steps.len() {
            return self.finish(Decision::End);
        }
        match self.render(self.cursor) {
            Ok(policy) => {
                self.awaiting = true;
                Decision::Emit(policy)
            }
            Err(reason) => self.finish(Decision::Error(reason)),
        }
    }

    fn finish(&mut self, d: Decision) -> Decision {
        self.finished = Some(d.clone());
        d
    }

    fn absorb(&mut self, fb: &Feedback) {
        let step = &self.steps[self.cursor].template;
        match (step.action, fb.produced.vm_ids.is_empty()) {
            (ActionKind::Create, false) => self.created_vms.extend(fb.produced.vm_ids.clone()),
            (ActionKind::Discover, false) => self.discovered_vms = fb.produced.vm_ids.clone(),
            _ => {}
        }
        if step.action == ActionKind::Discover && !fb.produced.service_ids.is_empty() {
            self.discovered_services = fb.produced.service_ids.clone();
        }
        self.checks.extend(fb.produced.check_ids.clone());
    }

    /// Handles a failed step. Returns an error reason when the plan has no
    /// way forward.
    fn on_failure(&mut self, fb: &Feedback) -> Option<String> {
        let step = self.steps[self.cursor].clone();
        let label = format!("{} {}", step.template.action, step.template.resource);
        match step.template.action {
            ActionKind::Avail if !fb.alternatives.is_empty() => {
                let Some(requested) = step.size.or(self.drift_size) else {
                    return Some(format!("{label} failed"));
                };
                let need = step.count.unwrap_or(1);
                if self.relaxations_here >= MAX_RELAXATIONS_PER_STEP {
                    return Some(format!("{label} failed after relaxation"));
                }
                match pick_relaxation(requested, need, &fb.alternatives) {
                    Some(to) if self.relax.get(&requested) != Some(&to) => {
                        self.relax.insert(requested, to);
                        self.relaxations_here += 1;
                        None
                    }
                    _ => Some(format!("no feasible alternative for {label}")),
                }
            }
            ActionKind::Start if !self.replace.is_empty() && step.template.id == "restart" => {
                self.steps.truncate(self.cursor + 1);
                self.steps.append(&mut self.replace);
                self.cursor += 1;
                None
            }
            _ => Some(format!("{label} failed")),
        }
    }

    fn effective(&self, size: Size) -> Size {
        *self.relax.get(&size).unwrap_or(&size)
    }

    fn items(&self) -> String {
        let mut merged: IndexMap<Size, u64> = IndexMap::new();
        for (size, count) in self.entities.counts_by_size() {
            *merged.entry(self.effective(size)).or_default() += count;
        }
        render_items(merged)
    }

    fn slot(&self, name: &str, step: &PlanStep) -> Result<Option<ConstraintValue>, String> {
        let list = |ids: &[String], what: &str| {
            if ids.is_empty() {
                Err(format!("no {what} to act on"))
            } else {
                Ok(Some(ConstraintValue::Text(ids.join(","))))
            }
        };
        let text = |s: String| Ok(Some(ConstraintValue::Text(s)));
        let drift = || self.drift.as_ref().ok_or_else(|| format!("{name} outside assurance"));
        match name {
            "$zone" => text(self.entities.zone.clone()),
            "$size" => match step.size {
                Some(s) => text(self.effective(s).to_string()),
                None => Err("step has no size".into()),
            },
            "$count" => match step.count {
                Some(c) => Ok(Some(ConstraintValue::Int(c as i64))),
                None => Err("step has no count".into()),
            },
            "$role" => Ok(step
                .role
                .as_ref()
                .filter(|r| *r != GENERIC_ROLE)
                .map(|r| ConstraintValue::Text(r.clone()))),
            "$items" => {
                if self.entities.vm_requests.is_empty() {
                    Err("no vm requests".into())
                } else {
                    text(self.items())
                }
            }
            "$chain" => {
                let mut roles = self.entities.chain_order.clone();
                if roles.is_empty() {
                    for r in &self.entities.vm_requests {
                        if r.role != GENERIC_ROLE && !roles.contains(&r.role) {
                            roles.push(r.role.clone());
                        }
                    }
                }
                list(&roles, "services")
            }
            "$created_vms" => list(&self.created_vms, "created vms"),
            "$check" => match self.checks.last() {
                Some(c) => text(c.clone()),
                None => Err("no health check to attach".into()),
            },
            "$sink" => text(self.settings.sink.clone()),
            "$period" => Ok(Some(ConstraintValue::Int(self.settings.period as i64))),
            "$discovered_vms" => list(&self.discovered_vms, "discovered vms"),
            "$discovered_services" => list(&self.discovered_services, "discovered services"),
            "$drift_vm" => text(drift()?.vm_id.clone()),
            "$drift_role" => Ok(Some(drift()?.role.clone())
                .filter(|r| r != GENERIC_ROLE)
                .map(ConstraintValue::Text)),
            "$drift_size" => match self.drift_size {
                Some(s) => text(self.effective(s).to_string()),
                None => Err("unknown size of drifted vm".into()),
            },
            "$drift_items" => match self.drift_size {
                Some(s) => text(render_items([(self.effective(s), 1)].into_iter().collect())),
                None => Err("unknown size of drifted vm".into()),
            },
            other => Err(format!("unknown slot {other}")),
        }
    }

    fn render(&self, index: usize) -> Result<Policy, String> {
        let step = &self.steps[index];
        let mut policy = Policy::new(step.template.action, step.template.resource);
        for (key, value) in &step.template.params {
            let resolved = match value {
                ParamValue::Int(n) => Some(ConstraintValue::Int(*n)),
                ParamValue::Text(t) if t.starts_with('$') => self.slot(t, step)?,
                ParamValue::Text(t) => Some(ConstraintValue::Text(t.clone())),
            };
            if let Some(v) = resolved {
                policy.constraints.insert(key.clone(), v);
            }
        }
        Ok(policy)
    }
}

fn render_items(items: IndexMap<Size, u64>) -> String {
    items
        .into_iter()
        .map(|(s, c)| format!("{s}:{c}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Nearest size below `requested` that fits `need` copies, else the nearest
/// above.
pub fn pick_relaxation(requested: Size, need: u64, alternatives: &[ReservationItem]) -> Option<Size> {
    let feasible = alternatives.iter().filter(|a| a.count >= need && a.size != requested);
    let below = feasible
        .clone()
        .filter(|a| a.size.rank() < requested.rank())
        .max_by_key(|a| a.size.rank());
    let above = feasible
        .filter(|a| a.size.rank() > requested.rank())
        .min_by_key(|a| a.size.rank());
    below.or(above).map(|a| a.size)
}

/// Builds the fulfillment plan for the classified types.
pub fn plan(
    templates: &TemplateSet,
    types: &[IntentType],
    entities: &EntitySet,
    settings: &PlanSettings,
) -> Result<PlanState, OracleError> {
    if types.is_empty() {
        return Err(OracleError::UnsupportedType("no intent types".into()));
    }
    let mut state = PlanState::blank(types, entities, settings);
    if state.types.contains(&IntentType::CreateResource) && entities.vm_requests.is_empty() {
        return Err(OracleError::ExtractionIncomplete(
            "create-resource intent names no vms".into(),
        ));
    }
    let mut seen: Vec<&str> = Vec::new();
    for kind in &state.types {
        let tpl = templates
            .for_type(*kind)
            .ok_or_else(|| OracleError::UnsupportedType(kind.to_string()))?;
        for step in &tpl.step {
            check_slots(step)?;
            if !step.applies_to(&state.types) || seen.contains(&step.id.as_str()) {
                continue;
            }
            seen.push(&step.id);
            match step.expand {
                Expansion::Once => state.steps.push(PlanStep::once(step)),
                Expansion::PerSize => {
                    for (size, count) in entities.counts_by_size() {
                        state.steps.push(PlanStep {
                            size: Some(size),
                            count: Some(count),
                            ..PlanStep::once(step)
                        });
                    }
                }
                Expansion::PerRequest => {
                    for r in &entities.vm_requests {
                        state.steps.push(PlanStep {
                            size: Some(r.size),
                            count: Some(r.count),
                            role: Some(r.role.clone()),
                            ..PlanStep::once(step)
                        });
                    }
                }
            }
        }
    }
    Ok(state)
}

/// Builds the assurance plan for a drift: restart first, with the
/// replacement branch held back until a start fails.
pub fn plan_assurance(
    templates: &TemplateSet,
    types: &[IntentType],
    entities: &EntitySet,
    drift: &DriftInfo,
    settings: &PlanSettings,
) -> Result<PlanState, OracleError> {
    let mut state = PlanState::blank(types, entities, settings);
    state.drift = Some(drift.clone());
    state.drift_size = entities.request_for_role(&drift.role).map(|r| r.size);
    if state.drift_size.is_none() {
        return Err(OracleError::ExtractionIncomplete(format!(
            "intent names no vm for role {}",
            drift.role
        )));
    }
    let deleted = drift.observed == "Deleted";
    let pick = |steps: &[StepTemplate]| -> Result<Vec<PlanStep>, OracleError> {
        let mut out = Vec::new();
        for s in steps {
            check_slots(s)?;
            if s.applies_to(&state.types) && !(deleted && s.skip_if_deleted) {
                out.push(PlanStep::once(s));
            }
        }
        Ok(out)
    };
    let restart = pick(&templates.assurance.restart)?;
    let replace = pick(&templates.assurance.replace)?;
    if deleted {
        state.steps = replace;
    } else {
        state.steps = restart;
        state.replace = replace;
    }
    Ok(state)
}
