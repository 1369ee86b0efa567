//! Template tables loaded from TOML.

use std::collections::HashSet;
use std::path::Path;

use indexmap::IndexMap;
use serde::Deserialize;

use crate::policy::{ActionKind, ResourceKind};

use super::{IntentType, OracleError};

const BUILTIN: &str = include_str!("../../data/templates.toml");

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expansion {
    #[default]
    Once,
    PerSize,
    PerRequest,
}

/// A literal parameter or a `$slot` reference.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepTemplate {
    pub id: String,
    pub action: ActionKind,
    pub resource: ResourceKind,
    #[serde(default)]
    pub expand: Expansion,
    #[serde(default)]
    pub when: Vec<IntentType>,
    #[serde(default)]
    pub skip_if_deleted: bool,
    #[serde(default)]
    pub params: IndexMap<String, ParamValue>,
}

impl StepTemplate {
    pub fn applies_to(&self, types: &[IntentType]) -> bool {
        self.when.is_empty() || self.when.iter().any(|t| types.contains(t))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeTemplate {
    #[serde(rename = "type")]
    pub kind: IntentType,
    pub step: Vec<StepTemplate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssuranceTemplates {
    pub restart: Vec<StepTemplate>,
    pub replace: Vec<StepTemplate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSet {
    pub template: Vec<TypeTemplate>,
    pub assurance: AssuranceTemplates,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::parse(BUILTIN).expect("built-in templates are valid")
    }
}

impl TemplateSet {
    pub fn parse(text: &str) -> Result<Self, OracleError> {
        let set: TemplateSet =
            toml::from_str(text).map_err(|e| OracleError::BadTemplates(e.to_string()))?;
        let mut seen = HashSet::new();
        for t in &set.template {
            if !seen.insert(t.kind) {
                return Err(OracleError::BadTemplates(format!(
                    "duplicate template for {}",
                    t.kind
                )));
            }
            if t.step.is_empty() {
                return Err(OracleError::BadTemplates(format!("{} has no steps", t.kind)));
            }
        }
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, OracleError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| OracleError::BadTemplates(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn for_type(&self, kind: IntentType) -> Option<&TypeTemplate> {
        self.template.iter().find(|t| t.kind == kind)
    }

    /// Every step template in the set.
    pub fn all_steps(&self) -> impl Iterator<Item = &StepTemplate> {
        self.template
            .iter()
            .flat_map(|t| t.step.iter())
            .chain(self.assurance.restart.iter())
            .chain(self.assurance.replace.iter())
    }

    /// Every (action, resource) pair the templates can emit.
    pub fn emitted_pairs(&self) -> Vec<(ActionKind, ResourceKind)> {
        let mut out: Vec<_> = self.all_steps().map(|s| (s.action, s.resource)).collect();
        out.sort();
        out.dedup();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_covers_every_type() {
        let set = TemplateSet::default();
        for t in IntentType::ALL {
            assert!(set.for_type(*t).is_some(), "no template for {t}");
        }
    }

    #[test]
    fn params_keep_file_order() {
        let set = TemplateSet::default();
        let create = set
            .for_type(IntentType::CreateResource)
            .unwrap()
            .step
            .iter()
            .find(|s| s.id == "create")
            .unwrap();
        let keys: Vec<&str> = create.params.keys().map(String::as_str).collect();
        assert_eq!(keys, ["zone", "role", "size", "count"]);
        assert_eq!(create.expand, Expansion::PerRequest);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(TemplateSet::parse("nonsense = 1").is_err());
        let dup = format!(
            "{}\n[[template]]\ntype = \"availability\"\n[[template.step]]\nid=\"x\"\naction=\"get\"\nresource=\"inventory\"\n",
            BUILTIN
        );
        assert!(matches!(
            TemplateSet::parse(&dup),
            Err(OracleError::BadTemplates(_))
        ));
    }
}
