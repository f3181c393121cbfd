//! Experiment configuration: a TOML file with strict (unknown-key rejecting)
//! parsing. Every run directory gets a manifest echoing the resolved config
//! so runs can be replayed exactly.

use crate::error::{Error, Result};
use crate::mamba::PaddingMode;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub samples_per_class: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Internal channel width of the denoiser.
    pub width: usize,
    /// States per channel in the selective scan.
    pub state_dim: usize,
    /// Number of stacked temporal blocks.
    pub mamba_depth: usize,
    /// Bypass attention rank k (must stay below `width`).
    pub rank: usize,
    /// Mixing weight when fixed.
    pub phi: f64,
    /// Learn phi through a sigmoid-parameterized logit instead.
    pub phi_learnable: bool,
    /// "learnable" | "fixed" | "none"
    pub padding: String,
    /// "replace" (temporal blocks stand in for temporal attention) or
    /// "insert_after" (keep temporal attention, add blocks after it)
    pub placement: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: usize,
    pub lr: f64,
    pub freeze_backbone: bool,
    /// Probability of replacing the condition with the null embedding.
    pub cond_drop_prob: f64,
    pub guidance_scale: f64,
    pub sample_steps: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            frames: 8,
            height: 16,
            width: 16,
            classes: 3,
            samples_per_class: 8,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            width: 16,
            state_dim: 8,
            mamba_depth: 2,
            rank: 12,
            phi: 0.5,
            phi_learnable: false,
            padding: "learnable".into(),
            placement: "replace".into(),
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            steps: 500,
            lr: 3e-3,
            freeze_backbone: false,
            cond_drop_prob: 0.1,
            guidance_scale: 12.5,
            sample_steps: 50,
        }
    }
}

/// Where the temporal blocks sit relative to temporal attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MambaPlacement {
    ReplaceTemporalAttention,
    InsertAfterTemporalAttention,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn padding_mode(&self) -> PaddingMode {
        match self.model.padding.as_str() {
            "none" => PaddingMode::None,
            "fixed" => PaddingMode::FixedToken(1.0),
            _ => PaddingMode::Learnable,
        }
    }

    pub fn placement(&self) -> MambaPlacement {
        match self.model.placement.as_str() {
            "insert_after" => MambaPlacement::InsertAfterTemporalAttention,
            _ => MambaPlacement::ReplaceTemporalAttention,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if !(4..=16).contains(&d.frames) {
            return Err(Error::Config(format!(
                "data.frames = {} outside [4, 16]",
                d.frames
            )));
        }
        if d.height != d.width {
            return Err(Error::Config("data.height must equal data.width".into()));
        }
        if !(16..=32).contains(&d.height) {
            return Err(Error::Config(format!(
                "data.height = {} outside [16, 32]",
                d.height
            )));
        }
        if d.classes == 0 || d.classes > 3 {
            return Err(Error::Config("data.classes must be 1..=3".into()));
        }
        if d.samples_per_class == 0 {
            return Err(Error::Config("data.samples_per_class must be positive".into()));
        }
        let m = &self.model;
        if m.width == 0 || m.state_dim == 0 {
            return Err(Error::Config("model.width and model.state_dim must be positive".into()));
        }
        if m.rank == 0 || m.rank >= m.width {
            return Err(Error::Config(format!(
                "model.rank = {} must satisfy 1 <= rank < width = {}",
                m.rank, m.width
            )));
        }
        if m.mamba_depth == 0 {
            return Err(Error::Config("model.mamba_depth must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&m.phi) {
            return Err(Error::Config("model.phi must lie in [0, 1]".into()));
        }
        if !["learnable", "fixed", "none"].contains(&m.padding.as_str()) {
            return Err(Error::Config(format!(
                "model.padding = {:?} (expected learnable | fixed | none)",
                m.padding
            )));
        }
        if !["replace", "insert_after"].contains(&m.placement.as_str()) {
            return Err(Error::Config(format!(
                "model.placement = {:?} (expected replace | insert_after)",
                m.placement
            )));
        }
        let t = &self.train;
        if t.lr <= 0.0 {
            return Err(Error::Config("train.lr must be positive".into()));
        }
        if !(0.0..=1.0).contains(&t.cond_drop_prob) {
            return Err(Error::Config("train.cond_drop_prob must lie in [0, 1]".into()));
        }
        if t.sample_steps == 0 {
            return Err(Error::Config("train.sample_steps must be positive".into()));
        }
        Ok(())
    }
}
