//! Prompt template files and their lint.
//!
//! Each stage has one file made of `[section]` blocks: `system`,
//! `policy-model`, `intent-types`, `actions` and `examples`. The two
//! vocabulary sections list one `- label` per line and must name every
//! supported intent type and action exactly once.

use std::path::Path;

use indexmap::IndexMap;

use crate::oracle::IntentType;
use crate::pipeline::StagePrompts;
use crate::policy::ActionKind;

use super::GatewayError;

pub const STAGES: [&str; 3] = ["classify", "decompose", "validate"];
pub const SECTIONS: [&str; 5] = ["system", "policy-model", "intent-types", "actions", "examples"];

const BUILTIN: [(&str, &str); 3] = [
    ("classify", include_str!("../../prompts/classify.prompt")),
    ("decompose", include_str!("../../prompts/decompose.prompt")),
    ("validate", include_str!("../../prompts/validate.prompt")),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub stage: String,
    pub sections: IndexMap<String, String>,
}

fn lint_error(stage: &str, msg: String) -> GatewayError {
    GatewayError::Config(format!("prompt template {stage}: {msg}"))
}

fn list_entries(body: &str) -> Vec<&str> {
    body.lines()
        .filter_map(|l| l.trim().strip_prefix("- "))
        .map(str::trim)
        .collect()
}

fn lint_vocabulary(stage: &str, section: &str, body: &str, expected: &[&str]) -> Result<(), GatewayError> {
    let entries = list_entries(body);
    for want in expected {
        let n = entries.iter().filter(|e| *e == want).count();
        if n != 1 {
            return Err(lint_error(
                stage,
                format!("[{section}] lists {want:?} {n} times, expected once"),
            ));
        }
    }
    if let Some(extra) = entries.iter().find(|e| !expected.contains(e)) {
        return Err(lint_error(stage, format!("[{section}] lists unsupported {extra:?}")));
    }
    Ok(())
}

impl PromptTemplate {
    pub fn parse(stage: &str, text: &str) -> Result<Self, GatewayError> {
        let mut sections: IndexMap<String, String> = IndexMap::new();
        let mut current: Option<String> = None;
        for line in text.lines() {
            let header = line
                .strip_prefix('[')
                .and_then(|l| l.trim_end().strip_suffix(']'))
                .filter(|name| SECTIONS.contains(name));
            if let Some(name) = header {
                if sections.contains_key(name) {
                    return Err(lint_error(stage, format!("section [{name}] appears twice")));
                }
                sections.insert(name.to_string(), String::new());
                current = Some(name.to_string());
            } else if let Some(name) = &current {
                let body = sections.get_mut(name).expect("section exists");
                body.push_str(line);
                body.push('\n');
            } else if !line.trim().is_empty() && !line.starts_with('#') {
                return Err(lint_error(stage, "text before the first section".into()));
            }
        }
        for body in sections.values_mut() {
            *body = body.trim().to_string();
        }
        let t = Self {
            stage: stage.to_string(),
            sections,
        };
        t.lint()?;
        Ok(t)
    }

    pub fn lint(&self) -> Result<(), GatewayError> {
        for name in SECTIONS {
            match self.sections.get(name) {
                Some(b) if !b.is_empty() => {}
                _ => return Err(lint_error(&self.stage, format!("missing section [{name}]"))),
            }
        }
        let types: Vec<&str> = IntentType::ALL.iter().map(|t| t.as_str()).collect();
        lint_vocabulary(&self.stage, "intent-types", &self.sections["intent-types"], &types)?;
        let actions: Vec<&str> = ActionKind::ALL.iter().map(|a| a.as_str()).collect();
        lint_vocabulary(&self.stage, "actions", &self.sections["actions"], &actions)
    }

    /// The system message sent at the start of a session.
    pub fn render(&self) -> String {
        let s = &self.sections;
        format!(
            "{}\n\nPolicy model:\n{}\n\nIntent types:\n{}\n\nActions:\n{}\n\nExamples:\n{}",
            s["system"], s["policy-model"], s["intent-types"], s["actions"], s["examples"]
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplateSet {
    pub stages: IndexMap<String, PromptTemplate>,
}

impl PromptTemplateSet {
    pub fn builtin() -> Self {
        let stages = BUILTIN
            .iter()
            .map(|(stage, text)| {
                let t = PromptTemplate::parse(stage, text).expect("built-in prompts pass lint");
                (stage.to_string(), t)
            })
            .collect();
        Self { stages }
    }

    /// Loads `<stage>.prompt` for every stage from `dir`.
    pub fn load(dir: &Path) -> Result<Self, GatewayError> {
        let mut stages = IndexMap::new();
        for stage in STAGES {
            let path = dir.join(format!("{stage}.prompt"));
            let text = std::fs::read_to_string(&path)
                .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
            stages.insert(stage.to_string(), PromptTemplate::parse(stage, &text)?);
        }
        Ok(Self { stages })
    }

    pub fn stage_prompts(&self) -> StagePrompts {
        StagePrompts {
            classify: self.stages["classify"].render(),
            decompose: self.stages["decompose"].render(),
            validate: self.stages["validate"].render(),
        }
    }
}

impl Default for StagePrompts {
    fn default() -> Self {
        PromptTemplateSet::builtin().stage_prompts()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_prompts_lint() {
        let set = PromptTemplateSet::builtin();
        assert_eq!(set.stages.len(), 3);
        assert!(set.stage_prompts().decompose.contains("- schedule-health-check"));
    }

    #[test]
    fn lint_catches_duplicates_and_gaps() {
        let good = BUILTIN[0].1;
        let dup = good.replacen("- get\n", "- get\n- get\n", 1);
        assert!(PromptTemplate::parse("classify", &dup).is_err());
        let gap = good.replacen("- availability\n", "", 1);
        assert!(PromptTemplate::parse("classify", &gap).is_err());
        let extra = good.replacen("- get\n", "- get\n- fly\n", 1);
        assert!(PromptTemplate::parse("classify", &extra).is_err());
        let missing = good.replacen("[examples]", "[notes]", 1);
        assert!(PromptTemplate::parse("classify", &missing).is_err());
    }
}
