//! Policy model: a single enforceable action with its definer, enforcer and
//! resource/temporal/spatial constraints, plus the flat JSON wire format.
//!
//! On the wire a policy is one flat JSON object such as
//! `{"action":"avail","resource":"vm","zone":"Domain1","size":"small","count":1}`.
//! The definer and enforcer never travel on the wire: the enforcer is derived
//! from the action and the definer is injected by whoever submits the policy.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Definer used when a policy arrives without an explicit submitting identity.
pub const DEFAULT_DEFINER: &str = "Administrator";

macro_rules! wire_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl FromStr for $name {
            type Err = ();

            fn from_str(s: &str) -> Result<Self, ()> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(()),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

wire_enum!(
    /// Closed action vocabulary. Anything else is rejected at parse time.
    ActionKind {
        Get => "get",
        Avail => "avail",
        Reserve => "reserve",
        Create => "create",
        Validate => "validate",
        Deploy => "deploy",
        Start => "start",
        Stop => "stop",
        Delete => "delete",
        Update => "update",
        Schedule => "schedule",
        Notify => "notify",
        Collect => "collect",
        Discover => "discover",
        Publish => "publish",
        Run => "run",
    }
);

wire_enum!(
    /// Closed resource vocabulary.
    ResourceKind {
        Vm => "vm",
        Inventory => "inventory",
        Service => "service",
        Chain => "chain",
        HealthCheck => "health-check",
        Notification => "notification",
    }
);

wire_enum!(
    /// The MAPE component that enforces a policy.
    MapeStage {
        Monitor => "Monitor",
        Analyze => "Analyze",
        Plan => "Plan",
        Execute => "Execute",
    }
);

impl ActionKind {
    /// The MAPE stage responsible for this action.
    pub fn enforcer(self) -> MapeStage {
        assign_enforcer(self)
    }
}

/// Enforcer assignment table. Total over the closed action set.
pub fn assign_enforcer(action: ActionKind) -> MapeStage {
    use ActionKind::*;
    match action {
        Get | Collect | Discover => MapeStage::Monitor,
        Avail => MapeStage::Analyze,
        Reserve => MapeStage::Plan,
        Create | Validate | Deploy | Start | Stop | Delete | Update | Schedule | Notify
        | Publish | Run => MapeStage::Execute,
    }
}

/// Constraint classes: resources, temporal, spatial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstraintClass {
    #[serde(rename = "R")]
    Resource,
    #[serde(rename = "T")]
    Temporal,
    #[serde(rename = "S")]
    Spatial,
}

const RESOURCE_KEYS: &[&str] = &[
    "size",
    "count",
    "image",
    "flavor",
    "services",
    "target",
    "role",
    "items",
    "sink",
    "reservation",
];
const TEMPORAL_KEYS: &[&str] = &["period", "expiration", "schedule-at"];
const SPATIAL_KEYS: &[&str] = &["zone", "domain", "region", "host"];

/// Constraint taxonomy lookup. Unknown keys fall back to the resource class;
/// use [`is_known_constraint_key`] to surface them as warnings.
pub fn classify_constraint_key(key: &str) -> ConstraintClass {
    if SPATIAL_KEYS.contains(&key) {
        ConstraintClass::Spatial
    } else if TEMPORAL_KEYS.contains(&key) {
        ConstraintClass::Temporal
    } else {
        ConstraintClass::Resource
    }
}

pub fn is_known_constraint_key(key: &str) -> bool {
    RESOURCE_KEYS.contains(&key) || TEMPORAL_KEYS.contains(&key) || SPATIAL_KEYS.contains(&key)
}

/// A constraint value. The wire format only carries strings and integers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConstraintValue {
    Int(i64),
    Text(String),
}

impl ConstraintValue {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            ConstraintValue::Text(s) => Some(s),
            ConstraintValue::Int(_) => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            ConstraintValue::Int(n) => Some(*n),
            ConstraintValue::Text(_) => None,
        }
    }

    fn to_json(&self) -> Value {
        match self {
            ConstraintValue::Int(n) => Value::from(*n),
            ConstraintValue::Text(s) => Value::from(s.as_str()),
        }
    }
}

impl fmt::Display for ConstraintValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintValue::Int(n) => write!(f, "{n}"),
            ConstraintValue::Text(s) => f.write_str(s),
        }
    }
}

impl From<&str> for ConstraintValue {
    fn from(s: &str) -> Self {
        ConstraintValue::Text(s.to_string())
    }
}

impl From<String> for ConstraintValue {
    fn from(s: String) -> Self {
        ConstraintValue::Text(s)
    }
}

impl From<i64> for ConstraintValue {
    fn from(n: i64) -> Self {
        ConstraintValue::Int(n)
    }
}

/// The constraint vector split into its three classes, each keeping
/// insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub resource: IndexMap<String, ConstraintValue>,
    pub temporal: IndexMap<String, ConstraintValue>,
    pub spatial: IndexMap<String, ConstraintValue>,
}

impl ConstraintSet {
    /// Inserts `key`, routing it to its class. An existing key keeps its
    /// position and gets the new value.
    pub fn insert(&mut self, key: impl Into<String>, value: impl Into<ConstraintValue>) {
        let key = key.into();
        let map = match classify_constraint_key(&key) {
            ConstraintClass::Resource => &mut self.resource,
            ConstraintClass::Temporal => &mut self.temporal,
            ConstraintClass::Spatial => &mut self.spatial,
        };
        map.insert(key, value.into());
    }

    pub fn get(&self, key: &str) -> Option<&ConstraintValue> {
        self.spatial
            .get(key)
            .or_else(|| self.resource.get(key))
            .or_else(|| self.temporal.get(key))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    pub fn remove(&mut self, key: &str) -> Option<ConstraintValue> {
        self.spatial
            .shift_remove(key)
            .or_else(|| self.resource.shift_remove(key))
            .or_else(|| self.temporal.shift_remove(key))
    }

    pub fn is_empty(&self) -> bool {
        self.resource.is_empty() && self.temporal.is_empty() && self.spatial.is_empty()
    }

    pub fn len(&self) -> usize {
        self.resource.len() + self.temporal.len() + self.spatial.len()
    }

    /// Keys in wire order: spatial, resource, then temporal.
    pub fn iter_wire(&self) -> impl Iterator<Item = (&String, &ConstraintValue)> {
        self.spatial
            .iter()
            .chain(self.resource.iter())
            .chain(self.temporal.iter())
    }

    /// Keys that fell back to the resource class because the taxonomy does
    /// not know them.
    pub fn unrecognized_keys(&self) -> Vec<&str> {
        self.resource
            .keys()
            .filter(|k| !is_known_constraint_key(k))
            .map(String::as_str)
            .collect()
    }
}

/// P = (D, E, A, C): definer, enforcer, action, constraints, plus the
/// resource the action applies to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub definer: String,
    pub enforcer: MapeStage,
    pub action: ActionKind,
    pub resource: ResourceKind,
    pub constraints: ConstraintSet,
}

impl Policy {
    pub fn new(action: ActionKind, resource: ResourceKind) -> Self {
        Self {
            definer: DEFAULT_DEFINER.to_string(),
            enforcer: assign_enforcer(action),
            action,
            resource,
            constraints: ConstraintSet::default(),
        }
    }

    /// Builder-style constraint insertion.
    pub fn with(mut self, key: &str, value: impl Into<ConstraintValue>) -> Self {
        self.constraints.insert(key, value);
        self
    }

    pub fn str_param(&self, key: &str) -> Option<&str> {
        self.constraints.get(key).and_then(ConstraintValue::as_str)
    }

    pub fn int_param(&self, key: &str) -> Option<i64> {
        self.constraints.get(key).and_then(ConstraintValue::as_int)
    }

    /// Comma-separated list parameter, trimmed, empty entries dropped.
    pub fn list_param(&self, key: &str) -> Vec<String> {
        self.str_param(key).map(split_list).unwrap_or_default()
    }

    pub fn to_json(&self) -> String {
        serialize_policy(self)
    }

    pub fn to_json_value(&self) -> Value {
        Value::Object(self.to_json_map())
    }

    fn to_json_map(&self) -> Map<String, Value> {
        let mut map = Map::new();
        map.insert("action".into(), Value::from(self.action.as_str()));
        map.insert("resource".into(), Value::from(self.resource.as_str()));
        for (k, v) in self.constraints.iter_wire() {
            map.insert(k.clone(), v.to_json());
        }
        map
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_policy(self))
    }
}

pub fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("policy text is not valid JSON: {0}")]
    InvalidJson(String),
    #[error("policy must be a JSON object")]
    NotAnObject,
    #[error("policy has no \"action\" key")]
    MissingAction,
    #[error("unknown action {0:?}")]
    UnknownAction(String),
    #[error("action {0} requires a \"resource\" key")]
    MissingResource(ActionKind),
    #[error("unknown resource {0:?}")]
    UnknownResource(String),
    #[error("malformed value for {key:?}: {reason}")]
    MalformedValue { key: String, reason: String },
}

/// Parses a flat policy object with the default definer.
pub fn parse_policy(text: &str) -> Result<Policy, PolicyError> {
    parse_policy_as(text, DEFAULT_DEFINER)
}

/// Parses a flat policy object submitted by `definer`.
pub fn parse_policy_as(text: &str, definer: &str) -> Result<Policy, PolicyError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| PolicyError::InvalidJson(e.to_string()))?;
    match value {
        Value::Object(map) => policy_from_map(&map, definer),
        _ => Err(PolicyError::NotAnObject),
    }
}

pub fn policy_from_map(map: &Map<String, Value>, definer: &str) -> Result<Policy, PolicyError> {
    let action = match map.get("action") {
        None => return Err(PolicyError::MissingAction),
        Some(Value::String(s)) => {
            ActionKind::from_str(s).map_err(|_| PolicyError::UnknownAction(s.clone()))?
        }
        Some(other) => return Err(PolicyError::UnknownAction(other.to_string())),
    };
    let resource = match map.get("resource") {
        None => return Err(PolicyError::MissingResource(action)),
        Some(Value::String(s)) => {
            ResourceKind::from_str(s).map_err(|_| PolicyError::UnknownResource(s.clone()))?
        }
        Some(other) => return Err(PolicyError::UnknownResource(other.to_string())),
    };

    let mut policy = Policy::new(action, resource);
    policy.definer = definer.to_string();
    for (key, raw) in map {
        if key == "action" || key == "resource" {
            continue;
        }
        let value = constraint_value(key, raw)?;
        check_value(key, &value)?;
        policy.constraints.insert(key.clone(), value);
    }
    Ok(policy)
}

fn constraint_value(key: &str, raw: &Value) -> Result<ConstraintValue, PolicyError> {
    let malformed = |reason: &str| PolicyError::MalformedValue {
        key: key.to_string(),
        reason: reason.to_string(),
    };
    match raw {
        Value::String(s) => Ok(ConstraintValue::Text(s.clone())),
        Value::Number(n) => n
            .as_i64()
            .map(ConstraintValue::Int)
            .ok_or_else(|| malformed("expected an integer")),
        Value::Null => Err(malformed("null is not allowed")),
        Value::Bool(_) => Err(malformed("booleans are not allowed")),
        Value::Array(_) | Value::Object(_) => Err(malformed("nested values are not allowed")),
    }
}

fn check_value(key: &str, value: &ConstraintValue) -> Result<(), PolicyError> {
    let positive = matches!(key, "count" | "period");
    let non_negative = matches!(key, "expiration" | "schedule-at");
    if !(positive || non_negative) {
        return Ok(());
    }
    let reason = match value {
        ConstraintValue::Int(n) if positive && *n <= 0 => "must be a positive integer",
        ConstraintValue::Int(n) if non_negative && *n < 0 => "must be a non-negative integer",
        ConstraintValue::Int(_) => return Ok(()),
        ConstraintValue::Text(_) => "must be an integer",
    };
    Err(PolicyError::MalformedValue {
        key: key.to_string(),
        reason: reason.to_string(),
    })
}

/// Flat JSON text: action, resource, then spatial, resource and temporal
/// constraints in insertion order.
pub fn serialize_policy(policy: &Policy) -> String {
    Value::Object(policy.to_json_map()).to_string()
}

/// Metadata carried alongside a policy but not on its wire form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyMetadata {
    pub policy_id: String,
    pub domain: String,
    /// Logical tick after which the policy may no longer run.
    pub expiration: Option<u64>,
    /// Lower is more important.
    pub priority: u8,
    pub autonomic_permission: bool,
}

impl PolicyMetadata {
    pub fn is_expired(&self, now: u64) -> bool {
        self.expiration.is_some_and(|t| now >= t)
    }
}

/// Deterministic policy ids derived from (seed, intent id, sequence index).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyIdGenerator {
    seed: u64,
}

impl PolicyIdGenerator {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn id(&self, intent_id: &str, index: usize) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(intent_id.as_bytes());
        hasher.update([0u8]);
        hasher.update((index as u64).to_le_bytes());
        let digest = hasher.finalize();
        // Index suffix keeps ids unique within one intent even on a prefix collision.
        format!("pol-{}-{index}", hex::encode(&digest[..4]))
    }
}
