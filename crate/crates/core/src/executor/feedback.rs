//! Execution results and the one-line feedback grammar sent back to the
//! decomposition backend.
//!
//! ```text
//! feedback  := "True" ids? | "False" detail?
//! ids       := ". " group (" " group)*
//! group     := name "=[" id (", " id)* "]"
//! detail    := ". Available alternatives: " alt (", " alt)* "." | ". " message
//! alt       := size "×" count
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::twin::{ReservationItem, Size};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackMode {
    #[default]
    Boolean,
    Detailed,
}

impl FromStr for FeedbackMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "boolean" => Ok(FeedbackMode::Boolean),
            "detailed" => Ok(FeedbackMode::Detailed),
            other => Err(format!("unknown feedback mode {other:?}")),
        }
    }
}

impl fmt::Display for FeedbackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeedbackMode::Boolean => "boolean",
            FeedbackMode::Detailed => "detailed",
        })
    }
}

/// Ids created or discovered by one operation, grouped by kind.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProducedIds {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vm_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reservation_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub chain_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub service_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub check_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sink_ids: Vec<String>,
}

const GROUPS: [&str; 6] = [
    "vm_ids",
    "reservation_ids",
    "chain_ids",
    "service_ids",
    "check_ids",
    "sink_ids",
];

impl ProducedIds {
    fn group(&self, name: &str) -> &Vec<String> {
        match name {
            "vm_ids" => &self.vm_ids,
            "reservation_ids" => &self.reservation_ids,
            "chain_ids" => &self.chain_ids,
            "service_ids" => &self.service_ids,
            "check_ids" => &self.check_ids,
            _ => &self.sink_ids,
        }
    }

    fn group_mut(&mut self, name: &str) -> Option<&mut Vec<String>> {
        Some(match name {
            "vm_ids" => &mut self.vm_ids,
            "reservation_ids" => &mut self.reservation_ids,
            "chain_ids" => &mut self.chain_ids,
            "service_ids" => &mut self.service_ids,
            "check_ids" => &mut self.check_ids,
            "sink_ids" => &mut self.sink_ids,
            _ => return None,
        })
    }

    pub fn is_empty(&self) -> bool {
        GROUPS.iter().all(|g| self.group(g).is_empty())
    }

    fn render(&self) -> String {
        GROUPS
            .iter()
            .filter(|g| !self.group(g).is_empty())
            .map(|g| format!("{g}=[{}]", self.group(g).join(", ")))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Outcome of one policy execution. Failures are in-band.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionResult {
    /// Twin operation the policy mapped to, empty when mapping failed.
    pub operation: String,
    pub success: bool,
    pub message: String,
    #[serde(default, skip_serializing_if = "ProducedIds::is_empty")]
    pub produced: ProducedIds,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alternatives: Vec<ReservationItem>,
}

impl ExecutionResult {
    pub fn ok(operation: &str, message: impl Into<String>, produced: ProducedIds) -> Self {
        Self {
            operation: operation.to_string(),
            success: true,
            message: message.into(),
            produced,
            alternatives: Vec::new(),
        }
    }

    pub fn failed(operation: &str, message: impl Into<String>) -> Self {
        Self {
            operation: operation.to_string(),
            success: false,
            message: message.into(),
            produced: ProducedIds::default(),
            alternatives: Vec::new(),
        }
    }
}

fn render_alternatives(alts: &[ReservationItem]) -> String {
    alts.iter()
        .map(|a| format!("{}×{}", a.size, a.count))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Renders the feedback line for `r`.
pub fn summarize_result(r: &ExecutionResult, mode: FeedbackMode) -> String {
    if r.success {
        if r.produced.is_empty() {
            "True".to_string()
        } else {
            format!("True. {}", r.produced.render())
        }
    } else {
        match mode {
            FeedbackMode::Boolean => "False".to_string(),
            FeedbackMode::Detailed if !r.alternatives.is_empty() => format!(
                "False. Available alternatives: {}.",
                render_alternatives(&r.alternatives)
            ),
            FeedbackMode::Detailed => {
                let msg = r.message.split_whitespace().collect::<Vec<_>>().join(" ");
                let msg = msg.trim_end_matches('.');
                if msg.is_empty() {
                    "False".to_string()
                } else {
                    format!("False. {msg}.")
                }
            }
        }
    }
}

/// A parsed feedback line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Feedback {
    pub success: bool,
    pub produced: ProducedIds,
    pub alternatives: Vec<ReservationItem>,
    pub message: Option<String>,
}

fn parse_alternative(s: &str) -> Option<ReservationItem> {
    let (size, count) = s.split_once('×').or_else(|| s.split_once('x'))?;
    Some(ReservationItem {
        size: size.trim().parse::<Size>().ok()?,
        count: count.trim().parse().ok()?,
    })
}

fn parse_groups(s: &str) -> Option<ProducedIds> {
    let mut ids = ProducedIds::default();
    let mut rest = s.trim();
    while !rest.is_empty() {
        let (name, after) = rest.split_once("=[")?;
        let (list, tail) = after.split_once(']')?;
        let slot = ids.group_mut(name.trim())?;
        slot.extend(
            list.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from),
        );
        rest = tail.trim_start();
    }
    Some(ids)
}

/// Parses a feedback line. Returns `None` when the line is not feedback.
pub fn parse_feedback(line: &str) -> Option<Feedback> {
    let line = line.trim();
    let (head, tail) = match line.split_once(". ") {
        Some((h, t)) => (h, Some(t)),
        None => (line.trim_end_matches('.'), None),
    };
    match head {
        "True" => {
            let produced = match tail {
                Some(t) => parse_groups(t)?,
                None => ProducedIds::default(),
            };
            Some(Feedback {
                success: true,
                produced,
                ..Feedback::default()
            })
        }
        "False" => {
            let mut fb = Feedback::default();
            if let Some(t) = tail {
                if let Some(list) = t.strip_prefix("Available alternatives:") {
                    fb.alternatives = list
                        .trim()
                        .trim_end_matches('.')
                        .split(',')
                        .map(|a| parse_alternative(a.trim()))
                        .collect::<Option<Vec<_>>>()?;
                } else {
                    fb.message = Some(t.trim_end_matches('.').to_string());
                }
            }
            Some(fb)
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vms(ids: &[&str]) -> ProducedIds {
        ProducedIds {
            vm_ids: ids.iter().map(|s| s.to_string()).collect(),
            ..ProducedIds::default()
        }
    }

    #[test]
    fn boolean_lines() {
        let ok = ExecutionResult::ok("reserve", "", ProducedIds::default());
        assert_eq!(summarize_result(&ok, FeedbackMode::Boolean), "True");
        let fail = ExecutionResult::failed("create_vm", "insufficient capacity");
        assert_eq!(summarize_result(&fail, FeedbackMode::Boolean), "False");
        let made = ExecutionResult::ok("create_vm", "", vms(&["vm-3", "vm-4"]));
        assert_eq!(
            summarize_result(&made, FeedbackMode::Boolean),
            "True. vm_ids=[vm-3, vm-4]"
        );
        assert_eq!(
            summarize_result(&made, FeedbackMode::Detailed),
            "True. vm_ids=[vm-3, vm-4]"
        );
    }

    #[test]
    fn detailed_alternatives() {
        let mut r = ExecutionResult::failed("check_availability", "unavailable");
        r.alternatives = vec![
            ReservationItem {
                size: Size::Medium,
                count: 1,
            },
            ReservationItem {
                size: Size::Small,
                count: 3,
            },
        ];
        let line = summarize_result(&r, FeedbackMode::Detailed);
        assert_eq!(line, "False. Available alternatives: medium×1, small×3.");
        let fb = parse_feedback(&line).unwrap();
        assert!(!fb.success);
        assert_eq!(fb.alternatives, r.alternatives);
        assert_eq!(
            summarize_result(&ExecutionResult::failed("x", "vm vm-1 is not running."), FeedbackMode::Detailed),
            "False. vm vm-1 is not running."
        );
    }

    #[test]
    fn non_feedback_lines() {
        assert_eq!(parse_feedback("Output only the policy JSON."), None);
        assert_eq!(parse_feedback("True. nonsense"), None);
    }

    fn ids_strategy() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec((1u32..500).prop_map(|n| format!("x-{n}")), 0..4)
    }

    proptest! {
        #[test]
        fn feedback_round_trip(
            success in any::<bool>(),
            detailed in any::<bool>(),
            a in ids_strategy(), b in ids_strategy(), c in ids_strategy(),
            d in ids_strategy(), e in ids_strategy(), f in ids_strategy(),
        ) {
            let produced = ProducedIds {
                vm_ids: a, reservation_ids: b, chain_ids: c,
                service_ids: d, check_ids: e, sink_ids: f,
            };
            let mode = if detailed { FeedbackMode::Detailed } else { FeedbackMode::Boolean };
            let r = if success {
                ExecutionResult::ok("op", "", produced.clone())
            } else {
                ExecutionResult::failed("op", "boom")
            };
            let line = summarize_result(&r, mode);
            prop_assert!(!line.contains('\n'));
            let fb = parse_feedback(&line).unwrap();
            prop_assert_eq!(fb.success, success);
            if success {
                prop_assert_eq!(fb.produced, produced);
            } else if !detailed {
                prop_assert_eq!(line, "False");
            }
        }
    }
}
