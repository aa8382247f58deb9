//! Reward terms of the lower-body controller.
//!
//! Every term is computed unweighted; the breakdown keeps each raw value and
//! its weight so the total can be recomputed independently.

use serde::{Deserialize, Serialize};

use crate::error::{LbcError, Result};
use crate::rotation::wrap_angle;
use crate::state::{Command, Joints, RobotState, LOWER_JOINTS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sigmas {
    pub lin_vel: f64,
    pub ang_vel: f64,
    pub height: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Default for Sigmas {
    fn default() -> Self {
        Self { lin_vel: 0.25, ang_vel: 0.25, height: 0.1, roll: 0.25, pitch: 0.25, yaw: 0.25 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointGroup {
    pub name: String,
    pub joints: Vec<usize>,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub lin_vel: f64,
    pub ang_vel: f64,
    pub height: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub energy: f64,
    pub action_rate: f64,
    pub joint_acc: f64,
    pub vertical_vel: f64,
    pub roll_pitch_rate: f64,
    pub undesired_contacts: f64,
    pub feet_slide: f64,
    pub flying: f64,
    pub feet_force: f64,
    pub feet_air_time: f64,
    pub feet_stumble: f64,
    pub torso_orientation: f64,
    pub joint_limits: f64,
    pub flat_orientation: f64,
    pub feet_distance: f64,
    pub termination: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            lin_vel: 1.0,
            ang_vel: 1.0,
            height: 1.0,
            roll: 1.0,
            pitch: 1.0,
            yaw: 1.0,
            energy: -0.001,
            action_rate: -0.01,
            joint_acc: -2.5e-7,
            vertical_vel: -1.0,
            roll_pitch_rate: -0.15,
            undesired_contacts: -1.0,
            feet_slide: -0.25,
            flying: -1.0,
            feet_force: -0.003,
            feet_air_time: 0.15,
            feet_stumble: -2.0,
            torso_orientation: -2.0,
            joint_limits: -2.0,
            flat_orientation: -1.0,
            feet_distance: -2.0,
            termination: -200.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub weights: RewardWeights,
    pub sigmas: Sigmas,
    /// Joint deviation penalties, one weight per joint group.
    pub joint_deviation: Vec<JointGroup>,
    pub force_excess_onset: f64,
    pub force_excess_cap: f64,
    pub stumble_ratio: f64,
    pub air_time_cap: f64,
    pub command_active_threshold: f64,
    pub feet_distance_threshold: f64,
    pub body_contact_threshold: f64,
    pub soft_limits_lower: Joints,
    pub soft_limits_upper: Joints,
}

impl Default for RewardConfig {
    fn default() -> Self {
        let group = |name: &str, joints: &[usize], weight: f64| JointGroup {
            name: name.to_string(),
            joints: joints.to_vec(),
            weight,
        };
        Self {
            weights: RewardWeights::default(),
            sigmas: Sigmas::default(),
            joint_deviation: vec![
                group("hip_roll_yaw", &[1, 2, 7, 8], -0.1),
                group("waist", &[12, 13, 14], -0.2),
                group("legs", &[0, 3, 4, 5, 6, 9, 10, 11], -0.02),
            ],
            force_excess_onset: 500.0,
            force_excess_cap: 400.0,
            stumble_ratio: 5.0,
            air_time_cap: 0.4,
            command_active_threshold: 0.1,
            feet_distance_threshold: 0.18,
            body_contact_threshold: 1.0,
            // placeholders, not the limits of any real robot
            soft_limits_lower: [-1.57; LOWER_JOINTS],
            soft_limits_upper: [1.57; LOWER_JOINTS],
        }
    }
}

impl RewardConfig {
    /// Tracking weights positive, penalty weights non-positive, sigmas positive.
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let tracking = [w.lin_vel, w.ang_vel, w.height, w.roll, w.pitch, w.yaw];
        if tracking.iter().any(|&v| !(v > 0.0)) {
            return Err(LbcError::Config("tracking weights must be positive".into()));
        }
        let penalties = [
            w.energy,
            w.action_rate,
            w.joint_acc,
            w.vertical_vel,
            w.roll_pitch_rate,
            w.undesired_contacts,
            w.feet_slide,
            w.flying,
            w.feet_force,
            w.feet_stumble,
            w.torso_orientation,
            w.joint_limits,
            w.flat_orientation,
            w.feet_distance,
            w.termination,
        ];
        if penalties.iter().chain(self.joint_deviation.iter().map(|g| &g.weight)).any(|&v| v > 0.0) {
            return Err(LbcError::Config("penalty weights must be non-positive".into()));
        }
        let s = &self.sigmas;
        if [s.lin_vel, s.ang_vel, s.height, s.roll, s.pitch, s.yaw].iter().any(|&v| !(v > 0.0)) {
            return Err(LbcError::Config("tracking sigmas must be positive".into()));
        }
        if self.joint_deviation.iter().flat_map(|g| &g.joints).any(|&j| j >= LOWER_JOINTS) {
            return Err(LbcError::Config("joint group index out of range".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardTerm {
    pub name: String,
    pub value: f64,
    pub weight: f64,
}

impl RewardTerm {
    pub fn contribution(&self) -> f64 {
        self.weight * self.value
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub terms: Vec<RewardTerm>,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn term(&self, name: &str) -> Option<&RewardTerm> {
        self.terms.iter().find(|t| t.name == name)
    }
}

/// Torso-relative-to-pelvis roll and yaw, absolute torso pitch.
pub fn torso_angles(state: &RobotState) -> (f64, f64, f64) {
    let (tr, tp, ty) = state.torso_quat.to_intrinsic_xyz();
    let (pr, _, py) = state.pelvis_quat.to_intrinsic_xyz();
    (wrap_angle(tr - pr), tp, wrap_angle(ty - py))
}

fn sq(v: f64) -> f64 {
    v * v
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn reward_breakdown(state: &RobotState, command: &Command, cfg: &RewardConfig) -> Result<RewardBreakdown> {
    state.validate()?;
    let w = &cfg.weights;
    let s = &cfg.sigmas;
    let (d_roll, pitch, d_yaw) = torso_angles(state);
    let track = |err2: f64, sigma: f64| (-err2 / (sigma * sigma)).exp();

    let v = &state.base_lin_vel;
    let om = &state.base_ang_vel;
    let feet = &state.feet;
    let contacts = feet.iter().filter(|f| f.contact).count();
    let air_time = if contacts == 1 { feet.iter().find(|f| !f.contact).unwrap().air_time } else { 0.0 };
    let cmd_active = norm(&[command.vx, command.vy]) + command.wz.abs() > cfg.command_active_threshold;
    let g_torso = state.torso_quat.projected_gravity();
    let gap = norm(&[
        feet[0].position[0] - feet[1].position[0],
        feet[0].position[1] - feet[1].position[1],
        feet[0].position[2] - feet[1].position[2],
    ]);

    let mut terms = vec![
        ("lin_vel", track(sq(v[0] - command.vx) + sq(v[1] - command.vy), s.lin_vel), w.lin_vel),
        ("ang_vel", track(sq(om[2] - command.wz), s.ang_vel), w.ang_vel),
        ("height", track(sq(state.base_height - command.height), s.height), w.height),
        ("roll", track(sq(wrap_angle(d_roll - command.roll)), s.roll), w.roll),
        ("pitch", track(sq(wrap_angle(pitch - command.pitch)), s.pitch), w.pitch),
        ("yaw", track(sq(wrap_angle(d_yaw - command.yaw)), s.yaw), w.yaw),
        (
            "energy",
            state.torque.iter().zip(&state.qd).map(|(t, q)| sq((t * q).abs())).sum::<f64>().sqrt(),
            w.energy,
        ),
        ("action_rate", state.action.iter().zip(&state.prev_action).map(|(a, b)| sq(a - b)).sum(), w.action_rate),
        ("joint_acc", state.qdd.iter().map(|a| a * a).sum(), w.joint_acc),
        ("vertical_vel", sq(v[2]), w.vertical_vel),
        ("roll_pitch_rate", sq(om[0]) + sq(om[1]), w.roll_pitch_rate),
        (
            "undesired_contacts",
            state.body_contact_forces.iter().filter(|f| norm(*f) > cfg.body_contact_threshold).count() as f64,
            w.undesired_contacts,
        ),
        (
            "feet_slide",
            feet.iter().filter(|f| f.contact).map(|f| norm(&f.velocity_xy)).sum(),
            w.feet_slide,
        ),
        ("flying", (contacts == 0) as u8 as f64, w.flying),
        (
            "feet_force",
            feet.iter()
                .map(|f| (f.force[2].abs() - cfg.force_excess_onset).max(0.0).clamp(0.0, cfg.force_excess_cap))
                .sum(),
            w.feet_force,
        ),
        (
            "feet_air_time",
            if contacts == 1 && cmd_active { air_time.min(cfg.air_time_cap) } else { 0.0 },
            w.feet_air_time,
        ),
        (
            "feet_stumble",
            feet.iter().any(|f| norm(&f.force[..2]) > cfg.stumble_ratio * f.force[2].abs()) as u8 as f64,
            w.feet_stumble,
        ),
        ("torso_orientation", sq(g_torso[0]) + sq(g_torso[1]), w.torso_orientation),
        (
            "joint_limits",
            (0..LOWER_JOINTS)
                .map(|j| {
                    (state.q[j] - cfg.soft_limits_upper[j]).max(0.0) + (cfg.soft_limits_lower[j] - state.q[j]).max(0.0)
                })
                .sum(),
            w.joint_limits,
        ),
        (
            "flat_orientation",
            sq(state.projected_gravity[0]) + sq(state.projected_gravity[1]),
            w.flat_orientation,
        ),
        ("feet_distance", (cfg.feet_distance_threshold - gap).max(0.0), w.feet_distance),
        ("termination", state.terminated as u8 as f64, w.termination),
    ]
    .into_iter()
    .map(|(name, value, weight)| RewardTerm { name: name.to_string(), value, weight })
    .collect::<Vec<_>>();
    for g in &cfg.joint_deviation {
        let value = g.joints.iter().map(|&j| (state.q[j] - state.q_default[j]).abs()).sum();
        terms.push(RewardTerm { name: format!("joint_deviation.{}", g.name), value, weight: g.weight });
    }
    let total = terms.iter().map(RewardTerm::contribution).sum();
    Ok(RewardBreakdown { terms, total })
}
