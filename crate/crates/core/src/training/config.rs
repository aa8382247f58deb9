use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HtdError, Result};
use crate::policy::{PolicyConfig, Variant};

use super::loss::LossConfig;

/// Where tactile latent targets come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMode {
    /// Detached encodings from the EMA teacher.
    EmaTeacher,
    /// The student's own encoder, gradient flowing into it. Used to
    /// demonstrate representation collapse; not a training recipe.
    LiveStudent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub ema_decay: f64,
    pub seed: u64,
    pub log_every: u64,
    /// 0 writes a checkpoint only at the end of the run.
    pub checkpoint_every: u64,
    pub targets: TargetMode,
    pub loss: LossConfig,
    pub policy: PolicyConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            learning_rate: 1e-4,
            grad_clip: 1.0,
            ema_decay: 0.996,
            seed: 0,
            log_every: 50,
            checkpoint_every: 0,
            targets: TargetMode::EmaTeacher,
            loss: LossConfig::default(),
            policy: PolicyConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HtdError::Config(e.to_string()))
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HtdError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn variant(&self) -> Variant {
        self.policy.variant
    }

    /// Selects a variant; variants without dream heads get zero dream weights.
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.policy.variant = variant;
        if !variant.dreams() {
            self.loss.lambda_force = 0.0;
            self.loss.lambda_tactile = 0.0;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        self.loss.validate()?;
        if self.batch_size == 0 {
            return Err(HtdError::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(HtdError::Config(format!("learning_rate must be non-negative, got {}", self.learning_rate)));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(HtdError::Config(format!("ema_decay must lie in (0, 1), got {}", self.ema_decay)));
        }
        if !self.variant().dreams() && (self.loss.lambda_force != 0.0 || self.loss.lambda_tactile != 0.0) {
            return Err(HtdError::Config(format!(
                "variant {} has no dream heads but dream loss weights are non-zero",
                self.variant()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_overrides_defaults() {
        let c = TrainConfig::from_toml_str(
            "steps = 10\n[loss]\nbeta = 0.25\n[policy]\nvariant = \"dream-raw\"\nd_model = 16\n",
        )
        .unwrap();
        assert_eq!(c.steps, 10);
        assert_eq!(c.loss.beta, 0.25);
        assert_eq!(c.loss.lambda_force, 1.0);
        assert_eq!(c.variant(), Variant::DreamRaw);
        assert_eq!(c.policy.d_model, 16);
        assert!(TrainConfig::from_toml_str("steps = \"many\"").is_err());
    }

    #[test]
    fn no_dream_zeroes_weights() {
        let c = TrainConfig::default().with_variant(Variant::NoDream);
        assert_eq!((c.loss.lambda_force, c.loss.lambda_tactile), (0.0, 0.0));
        c.validate().unwrap();
        let mut bad = c.clone();
        bad.loss.lambda_force = 1.0;
        assert!(bad.validate().is_err());
    }
}
