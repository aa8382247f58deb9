//! Observation and action layouts shared by the dataset, the policy and the
//! on-disk formats.

use serde::{Deserialize, Serialize};

use crate::error::{HtdError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Raw tactile readings per hand. Fixed by the sensor layout.
pub const TACTILE_PER_HAND: usize = 1062;
pub const TACTILE_BOTH_HANDS: usize = 2 * TACTILE_PER_HAND;
pub const IMAGE_VIEWS: usize = 4;
pub const VIEW_NAMES: [&str; IMAGE_VIEWS] = ["head_left", "head_right", "wrist_left", "wrist_right"];

/// Sizes of the observation streams. Per-hand fields always cover both hands,
/// left first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModalitySchema {
    pub image_height: usize,
    pub image_width: usize,
    pub body_dim: usize,
    pub hand_joints: usize,
}

impl Default for ModalitySchema {
    fn default() -> Self {
        Self { image_height: 64, image_width: 64, body_dim: 29, hand_joints: 6 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: String,
}

impl FieldSpec {
    fn new(name: &str, shape: &[usize], role: &str) -> Self {
        Self { name: name.into(), shape: shape.to_vec(), role: role.into() }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ModalitySchema {
    pub fn validate(&self) -> Result<()> {
        if self.image_height == 0 || self.image_width == 0 || self.body_dim == 0 || self.hand_joints == 0 {
            return Err(HtdError::Schema(format!("all modality sizes must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn image_len(&self) -> usize {
        self.image_height * self.image_width * 3
    }

    /// Joint count summed over both hands.
    pub fn hand_dim(&self) -> usize {
        2 * self.hand_joints
    }

    pub fn actions(&self) -> ActionSchema {
        ActionSchema { hand_joints: self.hand_joints }
    }

    /// Every per-timestep field in on-disk record order.
    pub fn record_fields(&self) -> Vec<FieldSpec> {
        let (h, w, j) = (self.image_height, self.image_width, self.hand_joints);
        let mut f: Vec<FieldSpec> =
            VIEW_NAMES.iter().map(|v| FieldSpec::new(&format!("image_{v}"), &[h, w, 3], "image")).collect();
        f.push(FieldSpec::new("body_proprio", &[self.body_dim], "proprio"));
        f.push(FieldSpec::new("hand_proprio", &[2, j], "proprio"));
        f.push(FieldSpec::new("hand_force", &[2, j], "force"));
        f.push(FieldSpec::new("tactile", &[2, TACTILE_PER_HAND], "tactile"));
        f.push(FieldSpec::new("action", &[self.actions().total_dim()], "action"));
        f.push(FieldSpec::new("contact", &[2], "label"));
        f.push(FieldSpec::new("phase", &[1], "label"));
        f
    }

    pub fn record_len(&self) -> usize {
        self.record_fields().iter().map(FieldSpec::len).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionModality {
    EndEffector,
    Torso,
    Velocity,
    Hand,
}

impl ActionModality {
    /// Order of the modalities inside the flat action vector.
    pub const ALL: [ActionModality; 4] =
        [ActionModality::EndEffector, ActionModality::Torso, ActionModality::Velocity, ActionModality::Hand];

    pub fn name(self) -> &'static str {
        match self {
            ActionModality::EndEffector => "end_effector",
            ActionModality::Torso => "torso",
            ActionModality::Velocity => "velocity",
            ActionModality::Hand => "hand",
        }
    }
}

/// Two wrists of position (3) plus a 6-D rotation (two basis columns).
pub const END_EFFECTOR_DIM: usize = 18;
/// Roll, pitch, yaw, height.
pub const TORSO_DIM: usize = 4;
/// v_x, v_y, yaw rate.
pub const VELOCITY_DIM: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSchema {
    pub hand_joints: usize,
}

impl ActionSchema {
    pub fn dim(&self, m: ActionModality) -> usize {
        match m {
            ActionModality::EndEffector => END_EFFECTOR_DIM,
            ActionModality::Torso => TORSO_DIM,
            ActionModality::Velocity => VELOCITY_DIM,
            ActionModality::Hand => 2 * self.hand_joints,
        }
    }

    pub fn offset(&self, m: ActionModality) -> usize {
        ActionModality::ALL.iter().take_while(|&&x| x != m).map(|&x| self.dim(x)).sum()
    }

    pub fn total_dim(&self) -> usize {
        ActionModality::ALL.iter().map(|&m| self.dim(m)).sum()
    }
}
