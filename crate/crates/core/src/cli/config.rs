use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapters::{AdapterConfig, AdapterMethod, ProjectionTag};
use crate::autodiff::LossSpec;
use crate::error::{Error, Result};
use crate::tasks::{ClusterTaskConfig, TrainConfig};

/// Adapter targets, either compact (`"QKVUD"`) or a list (`["Q", "Up"]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSpec {
    Compact(String),
    List(Vec<ProjectionTag>),
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec::Compact("Q".into())
    }
}

impl TargetSpec {
    pub fn tags(&self) -> Result<Vec<ProjectionTag>> {
        let mut tags = match self {
            TargetSpec::Compact(s) => ProjectionTag::parse_set(s)?,
            TargetSpec::List(v) => v.clone(),
        };
        tags.sort();
        tags.dedup();
        if tags.is_empty() {
            return Err(Error::config("targets", "no targets given"));
        }
        Ok(tags)
    }
}

/// Frozen host model used by `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Number of frozen linear layers (`tanh` in between).
    pub layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { layers: 4 }
    }
}

/// One JSON document describing a run. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub method: AdapterMethod,
    pub adapter: AdapterConfig,
    pub targets: TargetSpec,
    /// `builtin:<name>` or a fixture path (relative to the config file).
    pub geometry: String,
    pub model: ModelConfig,
    pub task: ClusterTaskConfig,
    pub train: TrainConfig,
    pub loss: LossSpec,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: AdapterMethod::TalkLora,
            adapter: AdapterConfig::default(),
            targets: TargetSpec::default(),
            geometry: "builtin:llama3-8b".into(),
            model: ModelConfig::default(),
            task: ClusterTaskConfig::default(),
            train: TrainConfig::default(),
            loss: LossSpec::Mse,
            output_dir: PathBuf::from("runs/default"),
            seed: 0,
        }
    }
}

/// RNG stream keys forked from the master seed.
pub mod streams {
    pub const FROZEN: u64 = 1;
    pub const ADAPTERS: u64 = 2;
    pub const DATA: u64 = 3;
    pub const TRAIN: u64 = 4;
    pub const ANALYSIS: u64 = 5;
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; returns it with the directory it lives in.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_json(&text)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, dir))
    }

    pub fn validate(&self) -> Result<()> {
        self.adapter.validate()?;
        self.targets.tags()?;
        if self.model.layers == 0 {
            return Err(Error::config("model.layers", "must be positive"));
        }
        Ok(())
    }

    /// The single target a `train` run adapts.
    pub fn train_target(&self) -> Result<ProjectionTag> {
        match self.targets.tags()?.as_slice() {
            [one] => Ok(*one),
            _ => Err(Error::config(
                "targets",
                "train runs adapt exactly one projection of the frozen stack",
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(RunConfig::from_json(r#"{"sed": 3}"#).is_err());
        assert!(RunConfig::from_json(r#"{"adapter": {"rnak": 3}}"#).is_err());
    }

    #[test]
    fn targets_accept_both_forms() {
        let a = RunConfig::from_json(r#"{"targets": "QKVUD"}"#).unwrap();
        let b = RunConfig::from_json(r#"{"targets": ["Down", "Q", "K", "V", "Up"]}"#).unwrap();
        assert_eq!(a.targets.tags().unwrap(), b.targets.tags().unwrap());
    }

    #[test]
    fn invalid_adapter_names_field() {
        let err = RunConfig::from_json(r#"{"adapter": {"rank": 6, "experts": 4}}"#).unwrap_err();
        assert!(err.to_string().contains("rank") || err.to_string().contains("experts"));
    }
}
