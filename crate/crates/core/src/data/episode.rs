use serde::{Deserialize, Serialize};

use crate::error::{HtdError, Result};
use crate::schema::{ModalitySchema, IMAGE_VIEWS, TACTILE_BOTH_HANDS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Approach,
    Contact,
    Grasp,
    Transport,
    Release,
}

impl Phase {
    pub const ALL: [Phase; 5] = [Phase::Approach, Phase::Contact, Phase::Grasp, Phase::Transport, Phase::Release];

    pub fn code(self) -> f32 {
        Phase::ALL.iter().position(|&p| p == self).unwrap() as f32
    }

    pub fn from_code(code: f32) -> Result<Self> {
        let i = code as usize;
        if code < 0.0 || code.fract() != 0.0 || i >= Phase::ALL.len() {
            return Err(HtdError::Data(format!("invalid phase code {code}")));
        }
        Ok(Phase::ALL[i])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    PowerGrasp,
    Pinch,
    BimanualLift,
    Push,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::PowerGrasp, Scenario::Pinch, Scenario::BimanualLift, Scenario::Push];
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub seed: u64,
    pub scenario: Scenario,
    pub len: usize,
}

/// One demonstration. Every stream is stored contiguously, timestep-major.
///
/// `images` holds the four views per step as `[view][row][col][rgb]`;
/// per-hand streams hold the left hand first.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub meta: EpisodeMeta,
    pub images: Vec<f32>,
    pub body: Vec<f32>,
    pub hand_proprio: Vec<f32>,
    pub hand_force: Vec<f32>,
    pub tactile: Vec<f32>,
    pub action: Vec<f32>,
    /// Per step: left and right hand contact labels.
    pub contact: Vec<[bool; 2]>,
    pub phase: Vec<Phase>,
}

impl Episode {
    pub fn empty(meta: EpisodeMeta) -> Self {
        Self {
            meta,
            images: Vec::new(),
            body: Vec::new(),
            hand_proprio: Vec::new(),
            hand_force: Vec::new(),
            tactile: Vec::new(),
            action: Vec::new(),
            contact: Vec::new(),
            phase: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.meta.len
    }

    pub fn is_empty(&self) -> bool {
        self.meta.len == 0
    }

    /// Checks that every stream has `len` steps under `schema`.
    pub fn validate(&self, schema: &ModalitySchema) -> Result<()> {
        let t = self.meta.len;
        let checks = [
            ("images", self.images.len(), IMAGE_VIEWS * schema.image_len()),
            ("body", self.body.len(), schema.body_dim),
            ("hand_proprio", self.hand_proprio.len(), schema.hand_dim()),
            ("hand_force", self.hand_force.len(), schema.hand_dim()),
            ("tactile", self.tactile.len(), TACTILE_BOTH_HANDS),
            ("action", self.action.len(), schema.actions().total_dim()),
            ("contact", self.contact.len(), 1),
            ("phase", self.phase.len(), 1),
        ];
        for (name, got, per_step) in checks {
            if got != t * per_step {
                return Err(HtdError::Data(format!(
                    "episode stream {name} has {got} values, expected {t} x {per_step}"
                )));
            }
        }
        Ok(())
    }

    fn row(data: &[f32], t: usize, width: usize) -> &[f32] {
        &data[t * width..(t + 1) * width]
    }

    pub fn image(&self, schema: &ModalitySchema, t: usize, view: usize) -> &[f32] {
        let n = schema.image_len();
        &self.images[(t * IMAGE_VIEWS + view) * n..(t * IMAGE_VIEWS + view + 1) * n]
    }

    pub fn body_at(&self, schema: &ModalitySchema, t: usize) -> &[f32] {
        Self::row(&self.body, t, schema.body_dim)
    }

    pub fn hand_proprio_at(&self, schema: &ModalitySchema, t: usize) -> &[f32] {
        Self::row(&self.hand_proprio, t, schema.hand_dim())
    }

    pub fn hand_force_at(&self, schema: &ModalitySchema, t: usize) -> &[f32] {
        Self::row(&self.hand_force, t, schema.hand_dim())
    }

    pub fn tactile_at(&self, t: usize) -> &[f32] {
        Self::row(&self.tactile, t, TACTILE_BOTH_HANDS)
    }

    pub fn action_at(&self, schema: &ModalitySchema, t: usize) -> &[f32] {
        Self::row(&self.action, t, schema.actions().total_dim())
    }

    /// True when either hand is labelled in contact.
    pub fn any_contact(&self, t: usize) -> bool {
        self.contact[t][0] || self.contact[t][1]
    }
}
