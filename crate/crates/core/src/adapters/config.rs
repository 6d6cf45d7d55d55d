use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters shared by every adapter family.
///
/// Layer dimensions are not part of the config: they come from the frozen
/// layer (single-layer use) or from the model geometry (stacks).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterConfig {
    /// Total rank `r`, split evenly across experts.
    pub rank: usize,
    /// Number of experts `n`; must divide `rank`.
    pub experts: usize,
    /// Scaling numerator; the adapter delta is multiplied by `lora_alpha / rank`.
    /// Defaults to `rank` (unit scaling).
    #[serde(default)]
    pub lora_alpha: Option<f64>,
    /// Share TalkLoRA up-projections `B_i` across layers of one projection type.
    #[serde(default = "default_true")]
    pub share_b: bool,
    /// Route on communicated representations; `false` is the "w/o Talking" ablation.
    #[serde(default = "default_true")]
    pub talking_enabled: bool,
    /// When set, `C` is rescaled after each optimizer step (and at build time)
    /// so that its spectral norm does not exceed this value.
    #[serde(default)]
    pub spectral_clip_c: Option<f64>,
    /// Inverted dropout on the adapter input during training.
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

fn default_true() -> bool {
    true
}

fn default_dropout() -> f64 {
    0.05
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self::new(4, 2)
    }
}

impl AdapterConfig {
    pub fn new(rank: usize, experts: usize) -> Self {
        Self {
            rank,
            experts,
            lora_alpha: None,
            share_b: true,
            talking_enabled: true,
            spectral_clip_c: None,
            dropout: default_dropout(),
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.lora_alpha = Some(alpha);
        self
    }

    pub fn with_share_b(mut self, share: bool) -> Self {
        self.share_b = share;
        self
    }

    pub fn with_talking(mut self, enabled: bool) -> Self {
        self.talking_enabled = enabled;
        self
    }

    pub fn with_spectral_clip(mut self, clip: Option<f64>) -> Self {
        self.spectral_clip_c = clip;
        self
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout = p;
        self
    }

    pub fn alpha(&self) -> f64 {
        self.lora_alpha.unwrap_or(self.rank as f64)
    }

    /// `lora_alpha / rank`.
    pub fn scale(&self) -> f64 {
        self.alpha() / self.rank as f64
    }

    /// Per-expert rank `r / n`.
    pub fn expert_rank(&self) -> usize {
        self.rank / self.experts
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::config("rank", "must be positive"));
        }
        if self.experts == 0 {
            return Err(Error::config("experts", "must be positive"));
        }
        if !self.rank.is_multiple_of(self.experts) {
            return Err(Error::config(
                "experts",
                format!("{} does not divide rank {}", self.experts, self.rank),
            ));
        }
        if !(self.alpha() > 0.0) || !self.alpha().is_finite() {
            return Err(Error::config("lora_alpha", "must be a positive finite number"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        if let Some(c) = self.spectral_clip_c {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::config("spectral_clip_c", "must be a positive finite number"));
            }
        }
        Ok(())
    }

    /// [`validate`](Self::validate) plus the low-rank condition `r ≤ min(d_in, d_out)`.
    pub fn validate_for(&self, d_in: usize, d_out: usize) -> Result<()> {
        self.validate()?;
        if d_in == 0 || d_out == 0 {
            return Err(Error::config("dims", "layer dimensions must be positive"));
        }
        if self.rank > d_in.min(d_out) {
            return Err(Error::config(
                "rank",
                format!("{} exceeds min(d_in={d_in}, d_out={d_out})", self.rank),
            ));
        }
        Ok(())
    }
}

/// Projection type an adapter is attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProjectionTag {
    Q,
    K,
    V,
    Up,
    Down,
}

impl ProjectionTag {
    pub const ALL: [ProjectionTag; 5] = [
        ProjectionTag::Q,
        ProjectionTag::K,
        ProjectionTag::V,
        ProjectionTag::Up,
        ProjectionTag::Down,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProjectionTag::Q => "Q",
            ProjectionTag::K => "K",
            ProjectionTag::V => "V",
            ProjectionTag::Up => "Up",
            ProjectionTag::Down => "Down",
        }
    }

    /// Parses a compact target string such as `"QKVUD"` or `"QV"`.
    pub fn parse_set(s: &str) -> Result<Vec<ProjectionTag>> {
        let mut out = Vec::new();
        for c in s.chars() {
            let tag = match c.to_ascii_uppercase() {
                'Q' => ProjectionTag::Q,
                'K' => ProjectionTag::K,
                'V' => ProjectionTag::V,
                'U' => ProjectionTag::Up,
                'D' => ProjectionTag::Down,
                _ => return Err(Error::UnknownTarget(c.to_string())),
            };
            if !out.contains(&tag) {
                out.push(tag);
            }
        }
        out.sort();
        Ok(out)
    }
}

impl fmt::Display for ProjectionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProjectionTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "q" | "query" => Ok(ProjectionTag::Q),
            "k" | "key" => Ok(ProjectionTag::K),
            "v" | "value" => Ok(ProjectionTag::V),
            "up" | "u" => Ok(ProjectionTag::Up),
            "down" | "d" => Ok(ProjectionTag::Down),
            _ => Err(Error::UnknownTarget(s.to_string())),
        }
    }
}

/// Adapter family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterMethod {
    Lora,
    MoeLora,
    TalkLora,
}

impl AdapterMethod {
    pub const ALL: [AdapterMethod; 3] = [
        AdapterMethod::Lora,
        AdapterMethod::MoeLora,
        AdapterMethod::TalkLora,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AdapterMethod::Lora => "lora",
            AdapterMethod::MoeLora => "moelora",
            AdapterMethod::TalkLora => "talklora",
        }
    }
}

impl fmt::Display for AdapterMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AdapterMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lora" => Ok(AdapterMethod::Lora),
            "moelora" | "moe-lora" | "moe_lora" => Ok(AdapterMethod::MoeLora),
            "talklora" | "talk-lora" | "talk_lora" => Ok(AdapterMethod::TalkLora),
            _ => Err(Error::UnknownMethod(s.to_string())),
        }
    }
}
