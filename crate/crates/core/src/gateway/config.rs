//! Engine configuration (TOML).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::executor::FeedbackMode;
use crate::llm::LiveSettings;
use crate::oracle::{Lexicon, PlanSettings, DEFAULT_SINK};
use crate::pipeline::DEFAULT_STEP_BUDGET;
use crate::twin::{
    FlavorTable, Resources, TwinConfig, DEFAULT_DOMAIN_CAPACITY, DEFAULT_HEALTH_CHECK_PERIOD,
    DEFAULT_RESERVATION_TTL,
};

use super::GatewayError;

/// Which completion backend the engine talks to.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum BackendSelection {
    #[default]
    Oracle,
    Replay(PathBuf),
    Live,
}

impl FromStr for BackendSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "oracle" => Ok(BackendSelection::Oracle),
            "live" => Ok(BackendSelection::Live),
            other => match other.strip_prefix("replay:") {
                Some(p) if !p.trim().is_empty() => Ok(BackendSelection::Replay(p.trim().into())),
                _ => Err(format!(
                    "backend must be \"oracle\", \"live\" or \"replay:<path>\", got {other:?}"
                )),
            },
        }
    }
}

impl fmt::Display for BackendSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSelection::Oracle => f.write_str("oracle"),
            BackendSelection::Live => f.write_str("live"),
            BackendSelection::Replay(p) => write!(f, "replay:{}", p.display()),
        }
    }
}

impl Serialize for BackendSelection {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BackendSelection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub backend: BackendSelection,
    pub model: String,
    pub endpoint: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub feedback_mode: FeedbackMode,
    /// Feedback mode for assurance runs; defaults to `feedback_mode`.
    pub assurance_feedback_mode: Option<FeedbackMode>,
    pub step_budget: usize,
    pub seed: u64,
    pub definer: String,
    pub autonomic_permission: bool,
    pub flavor_table: Option<PathBuf>,
    pub capacity: IndexMap<String, Resources>,
    pub default_zone: String,
    pub lexicon: Option<PathBuf>,
    pub prompt_dir: Option<PathBuf>,
    pub persistence_dir: Option<PathBuf>,
    pub record_transcript: Option<PathBuf>,
    pub health_check_period: u64,
    pub notification_sink: String,
    pub reservation_ttl: u64,
    pub build_delay: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let live = LiveSettings::default();
        let mut capacity = IndexMap::new();
        capacity.insert("Domain1".to_string(), DEFAULT_DOMAIN_CAPACITY);
        Self {
            backend: BackendSelection::Oracle,
            model: live.model,
            endpoint: live.endpoint,
            api_key_env: live.api_key_env,
            timeout_secs: live.timeout_secs,
            feedback_mode: FeedbackMode::Boolean,
            assurance_feedback_mode: None,
            step_budget: DEFAULT_STEP_BUDGET,
            seed: 0,
            definer: crate::policy::DEFAULT_DEFINER.to_string(),
            autonomic_permission: true,
            flavor_table: None,
            capacity,
            default_zone: "Domain1".to_string(),
            lexicon: None,
            prompt_dir: None,
            persistence_dir: None,
            record_transcript: None,
            health_check_period: DEFAULT_HEALTH_CHECK_PERIOD,
            notification_sink: DEFAULT_SINK.to_string(),
            reservation_ttl: DEFAULT_RESERVATION_TTL,
            build_delay: 0,
        }
    }
}

fn read(path: &Path) -> Result<String, GatewayError> {
    std::fs::read_to_string(path).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))
}

impl EngineConfig {
    pub fn parse(text: &str) -> Result<Self, GatewayError> {
        let cfg: EngineConfig =
            toml::from_str(text).map_err(|e| GatewayError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Loads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let mut cfg = Self::parse(&read(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(inner) = p {
                if inner.is_relative() {
                    *inner = base.join(&*inner);
                }
            }
        };
        fix(&mut cfg.flavor_table);
        fix(&mut cfg.lexicon);
        fix(&mut cfg.prompt_dir);
        fix(&mut cfg.persistence_dir);
        fix(&mut cfg.record_transcript);
        if let BackendSelection::Replay(p) = &mut cfg.backend {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::Config(m.to_string()));
        if self.step_budget == 0 {
            return bad("step_budget must be at least 1");
        }
        if self.health_check_period == 0 {
            return bad("health_check_period must be at least 1");
        }
        if self.capacity.is_empty() {
            return bad("capacity must name at least one zone");
        }
        if self.default_zone.trim().is_empty() {
            return bad("default_zone must not be empty");
        }
        if self.record_transcript.is_some() && matches!(self.backend, BackendSelection::Replay(_)) {
            return bad("record_transcript cannot be combined with a replay backend");
        }
        Ok(())
    }

    pub fn assurance_mode(&self) -> FeedbackMode {
        self.assurance_feedback_mode.unwrap_or(self.feedback_mode)
    }

    pub fn live_settings(&self) -> LiveSettings {
        LiveSettings {
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            api_key_env: self.api_key_env.clone(),
            timeout_secs: self.timeout_secs,
        }
    }

    pub fn twin_config(&self) -> Result<TwinConfig, GatewayError> {
        let flavors = match &self.flavor_table {
            Some(p) => {
                let t: FlavorTable =
                    toml::from_str(&read(p)?).map_err(|e| GatewayError::Config(format!("{}: {e}", p.display())))?;
                if t.0.is_empty() {
                    return Err(GatewayError::Config(format!("{}: empty flavor table", p.display())));
                }
                t
            }
            None => FlavorTable::default(),
        };
        Ok(TwinConfig {
            flavors,
            domains: self.capacity.clone(),
            build_delay: self.build_delay,
            reservation_ttl: self.reservation_ttl,
        })
    }

    pub fn lexicon(&self) -> Result<Lexicon, GatewayError> {
        let mut lex = match &self.lexicon {
            Some(p) => toml::from_str::<Lexicon>(&read(p)?)
                .map_err(|e| GatewayError::Config(format!("{}: {e}", p.display())))?,
            None => Lexicon::default(),
        };
        lex.default_zone = self.default_zone.clone();
        Ok(lex)
    }

    pub fn plan_settings(&self) -> PlanSettings {
        PlanSettings {
            period: self.health_check_period,
            sink: self.notification_sink.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys() {
        let cfg = EngineConfig::parse(
            r#"
backend = "replay:t.jsonl"
feedback_mode = "detailed"
step_budget = 8
seed = 7

[capacity.Domain1]
vcpu = 3
ram_gb = 64
disk_gb = 1000
"#,
        )
        .unwrap();
        assert_eq!(cfg.backend, BackendSelection::Replay("t.jsonl".into()));
        assert_eq!(cfg.feedback_mode, FeedbackMode::Detailed);
        assert_eq!(cfg.capacity["Domain1"], Resources::new(3, 64, 1000));
        assert_eq!(cfg.assurance_mode(), FeedbackMode::Detailed);
    }

    #[test]
    fn rejects_bad_config() {
        for text in [
            "backend = \"gpt\"",
            "colour = 1",
            "step_budget = 0",
            "backend = \"replay:x\"\nrecord_transcript = \"y\"",
        ] {
            assert!(matches!(EngineConfig::parse(text), Err(GatewayError::Config(_))), "{text}");
        }
    }
}
