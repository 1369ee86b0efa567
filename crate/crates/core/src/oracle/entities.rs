//! Intent types and pattern-based entity extraction.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::twin::Size;

use super::OracleError;

macro_rules! intent_types {
    ($($variant:ident => $label:literal),+ $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum IntentType {
            $(#[serde(rename = $label)] $variant),+
        }

        impl IntentType {
            /// Every supported type, in plan precedence order.
            pub const ALL: &'static [IntentType] = &[$(IntentType::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(IntentType::$variant => $label),+
                }
            }
        }
    };
}

intent_types!(
    CreateResource => "create-resource",
    DiscoverResource => "discover-resource",
    CollectResource => "collect-resource",
    ValidateResource => "validate-resource",
    DeployService => "deploy-service",
    StartService => "start-service",
    RunService => "run-service",
    StopService => "stop-service",
    PublishResource => "publish-resource",
    Availability => "availability",
    ScheduleHealthCheck => "schedule-health-check",
);

impl FromStr for IntentType {
    type Err = ();

    /// Accepts "create-resource", "create resource", "Create Resource".
    fn from_str(s: &str) -> Result<Self, ()> {
        let norm = s
            .trim()
            .trim_matches(|c: char| c == '"' || c == '\'' || c == '`' || c == '.')
            .to_ascii_lowercase()
            .split(|c: char| c.is_whitespace() || c == '-' || c == '_')
            .filter(|w| !w.is_empty())
            .collect::<Vec<_>>()
            .join("-");
        IntentType::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == norm)
            .ok_or(())
    }
}

impl fmt::Display for IntentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sorts into precedence order and drops duplicates.
pub fn normalize_types(types: &[IntentType]) -> Vec<IntentType> {
    let mut out = types.to_vec();
    out.sort();
    out.dedup();
    out
}

pub fn format_types(types: &[IntentType]) -> String {
    types
        .iter()
        .map(|t| t.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AvailabilityLevel {
    #[default]
    None,
    High,
}

/// Role assigned to VMs whose intent names no service.
pub const GENERIC_ROLE: &str = "generic";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VmRequest {
    pub role: String,
    pub size: Size,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySet {
    pub zone: String,
    pub vm_requests: Vec<VmRequest>,
    pub chain_order: Vec<String>,
    pub availability: AvailabilityLevel,
}

impl EntitySet {
    pub fn empty(zone: &str) -> Self {
        Self {
            zone: zone.to_string(),
            vm_requests: Vec::new(),
            chain_order: Vec::new(),
            availability: AvailabilityLevel::None,
        }
    }

    /// Total requested count per size, sizes in order of first mention.
    pub fn counts_by_size(&self) -> Vec<(Size, u64)> {
        let mut out: IndexMap<Size, u64> = IndexMap::new();
        for r in &self.vm_requests {
            *out.entry(r.size).or_default() += r.count;
        }
        out.into_iter().collect()
    }

    pub fn request_for_role(&self, role: &str) -> Option<&VmRequest> {
        self.vm_requests.iter().find(|r| r.role == role)
    }
}

/// Service vocabulary: alias phrase → canonical role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub default_zone: String,
    pub roles: IndexMap<String, String>,
}

impl Default for Lexicon {
    fn default() -> Self {
        let roles = [
            ("dpi", "dpi"),
            ("deep packet inspection", "dpi"),
            ("load-balancer", "load-balancer"),
            ("load balancer", "load-balancer"),
            ("loadbalancer", "load-balancer"),
            ("lb", "load-balancer"),
            ("web", "web"),
            ("web server", "web"),
            ("webserver", "web"),
        ]
        .into_iter()
        .map(|(a, r)| (a.to_string(), r.to_string()))
        .collect();
        Self {
            default_zone: "Domain1".to_string(),
            roles,
        }
    }
}

impl Lexicon {
    pub fn resolve(&self, phrase: &str) -> Option<&str> {
        let phrase = phrase.trim();
        self.roles
            .get(phrase)
            .or_else(|| {
                let singular = phrase.strip_suffix('s')?;
                self.roles.get(singular)
            })
            .map(String::as_str)
    }
}

struct Patterns {
    zone: Regex,
    named_zone: Regex,
    vm: Regex,
    role: Regex,
    availability: Regex,
    chain: Regex,
}

fn patterns() -> &'static Patterns {
    use std::sync::OnceLock;
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        zone: Regex::new(r"(?i)\bin\s+domain\s*-?\s*(\d+)\b").unwrap(),
        named_zone: Regex::new(r"\bin\s+([A-Z][A-Za-z]*\d+)\b").unwrap(),
        vm: Regex::new(
            r"(?i)\b(a|an|one|two|three|four|five|six|seven|eight|nine|ten|\d+)\s+(small|medium|large)\s+(?:[a-z-]+\s+)?(?:vms?|virtual\s+machines?)\b",
        )
        .unwrap(),
        role: Regex::new(
            r"(?i)^\s*for\s+(?:the\s+|a\s+|an\s+)?([a-z][a-z -]*?)\s*(?:services?|servers?|vnfs?|functions?)?\s*(?:[,.;:]|\band\b|\bin\b|$)",
        )
        .unwrap(),
        availability: Regex::new(r"(?i)\bhigh(?:ly)?[\s-]+availab").unwrap(),
        chain: Regex::new(r"(?i)\bchain\b").unwrap(),
    })
}

fn count_word(word: &str) -> Option<u64> {
    let w = word.to_ascii_lowercase();
    let n = match w.as_str() {
        "a" | "an" | "one" => 1,
        "two" => 2,
        "three" => 3,
        "four" => 4,
        "five" => 5,
        "six" => 6,
        "seven" => 7,
        "eight" => 8,
        "nine" => 9,
        "ten" => 10,
        digits => digits.parse().ok()?,
    };
    (n > 0).then_some(n)
}

/// Pulls zone, VM requests, chain order and availability out of intent text.
pub fn extract_entities(text: &str, lexicon: &Lexicon) -> Result<EntitySet, OracleError> {
    if text.trim().is_empty() {
        return Err(OracleError::ExtractionIncomplete("empty intent".into()));
    }
    let p = patterns();
    let zone = if let Some(c) = p.zone.captures(text) {
        format!("Domain{}", &c[1])
    } else if let Some(c) = p.named_zone.captures(text) {
        c[1].to_string()
    } else {
        lexicon.default_zone.clone()
    };

    let mut vm_requests = Vec::new();
    for cap in p.vm.captures_iter(text) {
        let count = count_word(&cap[1]).ok_or_else(|| {
            OracleError::ExtractionIncomplete(format!("bad count {:?}", &cap[1]))
        })?;
        let size: Size = cap[2].parse().expect("regex only matches known sizes");
        let tail = &text[cap.get(0).unwrap().end()..];
        let role = match p.role.captures(tail) {
            Some(rc) => {
                let phrase = rc[1].to_ascii_lowercase();
                lexicon
                    .resolve(&phrase)
                    .ok_or_else(|| {
                        OracleError::ExtractionIncomplete(format!("unknown service {phrase:?}"))
                    })?
                    .to_string()
            }
            None => GENERIC_ROLE.to_string(),
        };
        vm_requests.push(VmRequest { role, size, count });
    }

    let mut chain_order = Vec::new();
    if p.chain.is_match(text) {
        for r in &vm_requests {
            if r.role != GENERIC_ROLE && !chain_order.contains(&r.role) {
                chain_order.push(r.role.clone());
            }
        }
    }
    let availability = if p.availability.is_match(text) {
        AvailabilityLevel::High
    } else {
        AvailabilityLevel::None
    };
    Ok(EntitySet {
        zone,
        vm_requests,
        chain_order,
        availability,
    })
}

struct Rule {
    kind: IntentType,
    pattern: &'static str,
}

const RULES: &[Rule] = &[
    Rule {
        kind: IntentType::CreateResource,
        pattern: r"\b(create|provision|launch|spin\s+up|instantiate)\b|\b(small|medium|large)\s+(?:[a-z-]+\s+)?vms?\b",
    },
    Rule {
        kind: IntentType::DiscoverResource,
        pattern: r"\b(discover|find|list)\b",
    },
    Rule {
        kind: IntentType::CollectResource,
        pattern: r"\b(collect|gather)\b",
    },
    Rule {
        kind: IntentType::ValidateResource,
        pattern: r"\b(validate|verify)\b",
    },
    Rule {
        kind: IntentType::DeployService,
        pattern: r"\bdeploy\b.*\b(service|chain|function)",
    },
    Rule {
        kind: IntentType::StartService,
        pattern: r"\bstart\b.*\bservices?\b",
    },
    Rule {
        kind: IntentType::RunService,
        pattern: r"\brun\b.*\bservices?\b",
    },
    Rule {
        kind: IntentType::StopService,
        pattern: r"\bstop\b.*\bservices?\b",
    },
    Rule {
        kind: IntentType::PublishResource,
        pattern: r"\b(publish|expose)\b",
    },
    Rule {
        kind: IntentType::Availability,
        pattern: r"\bhigh(?:ly)?[\s-]+availab",
    },
    Rule {
        kind: IntentType::ScheduleHealthCheck,
        pattern: r"\b(monitored|monitor|monitoring|health[\s-]+checks?)\b",
    },
];

/// Keyword classifier used by the oracle backend. Returns types in precedence
/// order; empty when nothing matches.
pub fn classify_keywords(text: &str) -> Vec<IntentType> {
    use std::sync::OnceLock;
    static COMPILED: OnceLock<Vec<(IntentType, Regex)>> = OnceLock::new();
    let compiled = COMPILED.get_or_init(|| {
        RULES
            .iter()
            .map(|r| (r.kind, Regex::new(&format!("(?i){}", r.pattern)).unwrap()))
            .collect()
    });
    compiled
        .iter()
        .filter(|(_, re)| re.is_match(text))
        .map(|(k, _)| *k)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const USE_CASE: &str = "Deploy a service function chain with high availability in Domain1 consisting of: a medium vm for the dpi service, a medium vm for the load-balancer service, and 2 small vms for the web servers.";

    #[test]
    fn use_case_entities() {
        let e = extract_entities(USE_CASE, &Lexicon::default()).unwrap();
        assert_eq!(e.zone, "Domain1");
        let reqs: Vec<(&str, Size, u64)> = e
            .vm_requests
            .iter()
            .map(|r| (r.role.as_str(), r.size, r.count))
            .collect();
        assert_eq!(
            reqs,
            vec![
                ("dpi", Size::Medium, 1),
                ("load-balancer", Size::Medium, 1),
                ("web", Size::Small, 2)
            ]
        );
        assert_eq!(e.chain_order, vec!["dpi", "load-balancer", "web"]);
        assert_eq!(e.availability, AvailabilityLevel::High);
        assert_eq!(e.counts_by_size(), vec![(Size::Medium, 2), (Size::Small, 2)]);
    }

    #[test]
    fn monitored_vm_entities() {
        let e = extract_entities("Create a small monitored VM in domain 1.", &Lexicon::default())
            .unwrap();
        assert_eq!(e.zone, "Domain1");
        assert_eq!(
            e.vm_requests,
            vec![VmRequest {
                role: GENERIC_ROLE.into(),
                size: Size::Small,
                count: 1
            }]
        );
        assert_eq!(e.availability, AvailabilityLevel::None);
        assert!(e.chain_order.is_empty());
    }

    #[test]
    fn extraction_errors() {
        let lex = Lexicon::default();
        assert!(matches!(
            extract_entities("  ", &lex),
            Err(OracleError::ExtractionIncomplete(_))
        ));
        assert!(matches!(
            extract_entities("Create a small vm for the quantum service.", &lex),
            Err(OracleError::ExtractionIncomplete(_))
        ));
        let e = extract_entities("Create three large vms for the load balancer in Region7", &lex)
            .unwrap();
        assert_eq!(e.zone, "Region7");
        assert_eq!(e.vm_requests[0].role, "load-balancer");
        assert_eq!(e.vm_requests[0].count, 3);
    }

    #[test]
    fn keyword_classification() {
        assert_eq!(
            classify_keywords("Create a small monitored VM in domain 1."),
            vec![IntentType::CreateResource, IntentType::ScheduleHealthCheck]
        );
        assert_eq!(
            classify_keywords(USE_CASE),
            vec![
                IntentType::CreateResource,
                IntentType::DeployService,
                IntentType::Availability
            ]
        );
        assert!(classify_keywords("Make me a sandwich").is_empty());
    }

    #[test]
    fn type_labels() {
        assert_eq!("create resource".parse(), Ok(IntentType::CreateResource));
        assert_eq!("Schedule Health Check".parse(), Ok(IntentType::ScheduleHealthCheck));
        assert_eq!("availability".parse(), Ok(IntentType::Availability));
        assert!("teleport".parse::<IntentType>().is_err());
        for t in IntentType::ALL {
            assert_eq!(t.as_str().parse::<IntentType>(), Ok(*t));
        }
        assert_eq!(
            normalize_types(&[IntentType::Availability, IntentType::CreateResource, IntentType::Availability]),
            vec![IntentType::CreateResource, IntentType::Availability]
        );
    }
}
