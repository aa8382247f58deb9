use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{HtdError, Result};
use crate::schema::ActionModality;
use crate::tactile::TactileEncoderConfig;

/// Which touch pathways a model has.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// No tactile or hand-force inputs, no dreaming.
    NoTouch,
    /// Touch inputs, no dream heads.
    NoDream,
    /// Touch inputs; dreams future forces and raw future tactile frames.
    DreamRaw,
    /// Touch inputs; dreams future forces and future tactile latents.
    DreamLatent,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::NoTouch, Variant::NoDream, Variant::DreamRaw, Variant::DreamLatent];

    pub fn name(self) -> &'static str {
        match self {
            Variant::NoTouch => "no-touch",
            Variant::NoDream => "no-dream",
            Variant::DreamRaw => "dream-raw",
            Variant::DreamLatent => "dream-latent",
        }
    }

    pub fn touch_inputs(self) -> bool {
        self != Variant::NoTouch
    }

    pub fn dreams(self) -> bool {
        matches!(self, Variant::DreamRaw | Variant::DreamLatent)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = HtdError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| HtdError::Config(format!("unknown variant {s:?}; expected one of no-touch, no-dream, dream-raw, dream-latent")))
    }
}

/// Decoder output tokens per action modality.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputTokens {
    pub end_effector: usize,
    pub torso: usize,
    pub velocity: usize,
    pub hand: usize,
}

impl Default for OutputTokens {
    fn default() -> Self {
        Self { end_effector: 4, torso: 2, velocity: 2, hand: 4 }
    }
}

impl OutputTokens {
    pub fn count(&self, m: ActionModality) -> usize {
        match m {
            ActionModality::EndEffector => self.end_effector,
            ActionModality::Torso => self.torso,
            ActionModality::Velocity => self.velocity,
            ActionModality::Hand => self.hand,
        }
    }

    pub fn total(&self) -> usize {
        ActionModality::ALL.iter().map(|&m| self.count(m)).sum()
    }

    /// Decoder positions owned by `m`; spans follow [`ActionModality::ALL`].
    pub fn span(&self, m: ActionModality) -> Range<usize> {
        let start: usize = ActionModality::ALL.iter().take_while(|&&x| x != m).map(|&x| self.count(x)).sum();
        start..start + self.count(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub variant: Variant,
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_dim: usize,
    pub image_tokens: usize,
    pub state_tokens: usize,
    pub tactile_tokens: usize,
    pub output_tokens: OutputTokens,
    /// Action chunk length h.
    pub horizon: usize,
    /// Dream horizon tau.
    pub dream_horizon: usize,
    pub image_channels: usize,
    pub state_hidden: usize,
    pub expert_hidden: usize,
    pub tactile: TactileEncoderConfig,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            variant: Variant::DreamLatent,
            d_model: 256,
            heads: 4,
            encoder_layers: 3,
            decoder_layers: 3,
            ffn_dim: 512,
            image_tokens: 4,
            state_tokens: 2,
            tactile_tokens: 4,
            output_tokens: OutputTokens::default(),
            horizon: 8,
            dream_horizon: 8,
            image_channels: 16,
            state_hidden: 64,
            expert_hidden: 128,
            tactile: TactileEncoderConfig::default(),
        }
    }
}

impl PolicyConfig {
    /// A reduced model that trains in seconds on one core.
    pub fn small() -> Self {
        Self {
            d_model: 32,
            heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            ffn_dim: 64,
            image_channels: 4,
            state_hidden: 32,
            expert_hidden: 64,
            tactile: TactileEncoderConfig { latent_dim: 16, conv_channels: 4, fusion_hidden: 32, ..Default::default() },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("image_tokens", self.image_tokens),
            ("state_tokens", self.state_tokens),
            ("tactile_tokens", self.tactile_tokens),
            ("horizon", self.horizon),
            ("dream_horizon", self.dream_horizon),
            ("image_channels", self.image_channels),
            ("state_hidden", self.state_hidden),
            ("expert_hidden", self.expert_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(HtdError::Config(format!("policy {name} must be at least 1")));
            }
        }
        for m in ActionModality::ALL {
            if self.output_tokens.count(m) == 0 {
                return Err(HtdError::Config(format!("action modality {} needs at least one output token", m.name())));
            }
        }
        if self.d_model % self.heads != 0 {
            return Err(HtdError::Config(format!("d_model {} not divisible by {} heads", self.d_model, self.heads)));
        }
        Ok(())
    }

    /// Encoder input length; depends on the config only.
    pub fn input_tokens(&self) -> usize {
        let base = 4 * self.image_tokens + 2 * self.state_tokens;
        if self.variant.touch_inputs() {
            base + self.state_tokens + 2 * self.tactile_tokens
        } else {
            base
        }
    }
}
