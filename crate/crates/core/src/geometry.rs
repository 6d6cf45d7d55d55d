//! Host-model geometries: layer count, total parameter count and the
//! input/output dimensions of each adaptable projection.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapters::ProjectionTag;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionDims {
    pub tag: ProjectionTag,
    pub d_in: usize,
    pub d_out: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelGeometry {
    pub name: String,
    pub total_params: u64,
    pub layers: usize,
    pub projections: Vec<ProjectionDims>,
    /// Free-form provenance note.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

const BUILTIN: &[(&str, &str)] = &[
    ("llama3-8b", include_str!("../fixtures/llama3-8b.json")),
    ("llama2-7b", include_str!("../fixtures/llama2-7b.json")),
    ("qwen2.5-7b", include_str!("../fixtures/qwen2.5-7b.json")),
    ("toy", include_str!("../fixtures/toy.json")),
];

impl ModelGeometry {
    pub fn from_json(s: &str) -> Result<Self> {
        let g: ModelGeometry = serde_json::from_str(s)?;
        g.validate()?;
        Ok(g)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Names of the fixtures compiled into the crate.
    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN.iter().map(|(n, _)| *n)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let (_, text) = BUILTIN
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::config("geometry", format!("no builtin geometry `{name}`")))?;
        Self::from_json(text)
    }

    /// `builtin:<name>` selects a compiled-in fixture, anything else is a path.
    pub fn resolve(spec: &str, base_dir: Option<&Path>) -> Result<Self> {
        if let Some(name) = spec.strip_prefix("builtin:") {
            return Self::builtin(name);
        }
        let path = Path::new(spec);
        match base_dir {
            Some(dir) if path.is_relative() => Self::load(&dir.join(path)),
            _ => Self::load(path),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::config("layers", "must be positive"));
        }
        if self.total_params == 0 {
            return Err(Error::config("total_params", "must be positive"));
        }
        let mut seen = BTreeSet::new();
        for p in &self.projections {
            if p.d_in == 0 || p.d_out == 0 {
                return Err(Error::config(
                    format!("projections.{}", p.tag),
                    "dimensions must be positive",
                ));
            }
            if !seen.insert(p.tag) {
                return Err(Error::config(
                    format!("projections.{}", p.tag),
                    "duplicate tag",
                ));
            }
        }
        Ok(())
    }

    pub fn dims(&self, tag: ProjectionTag) -> Option<ProjectionDims> {
        self.projections.iter().copied().find(|p| p.tag == tag)
    }

    /// Checks that every target exists in this geometry and returns their dims
    /// in canonical tag order.
    pub fn target_dims(&self, targets: &[ProjectionTag]) -> Result<Vec<ProjectionDims>> {
        if targets.is_empty() {
            return Err(Error::config("targets", "must not be empty"));
        }
        let set: BTreeSet<_> = targets.iter().copied().collect();
        set.into_iter()
            .map(|t| {
                self.dims(t).ok_or_else(|| {
                    Error::config("targets", format!("geometry `{}` has no {t} projection", self.name))
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse() {
        for name in ModelGeometry::builtin_names() {
            ModelGeometry::builtin(name).unwrap();
        }
        let g = ModelGeometry::builtin("llama3-8b").unwrap();
        assert_eq!(g.layers, 32);
        assert_eq!(g.dims(ProjectionTag::K).unwrap().d_out, 1024);
    }

    #[test]
    fn rejects_duplicates_and_unknown_keys() {
        let dup = r#"{"name":"x","total_params":10,"layers":1,
            "projections":[{"tag":"Q","d_in":2,"d_out":2},{"tag":"Q","d_in":2,"d_out":2}]}"#;
        assert!(ModelGeometry::from_json(dup).is_err());
        let extra = r#"{"name":"x","total_params":10,"layers":1,"projections":[],"extra":1}"#;
        assert!(ModelGeometry::from_json(extra).is_err());
    }

    #[test]
    fn missing_target_rejected() {
        let g = ModelGeometry::builtin("toy").unwrap();
        assert!(g.target_dims(&[ProjectionTag::Up]).is_err());
        assert!(g.target_dims(&[]).is_err());
    }
}
