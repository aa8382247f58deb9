//! Robot state, commands and the observation vectors built from them.

use serde::{Deserialize, Serialize};

use crate::error::{LbcError, Result};
use crate::rotation::Quat;

/// 2 x 6 leg joints plus 3 waist joints.
pub const LOWER_JOINTS: usize = 15;
/// `[omega (3), gravity (3), q (15), qdot (15), previous action (15)]`.
pub const PROPRIO_DIM: usize = 3 + 3 + 3 * LOWER_JOINTS;
pub const COMMAND_DIM: usize = 7;
pub const STUDENT_HISTORY: usize = 2;
pub const STUDENT_OBS_DIM: usize = (STUDENT_HISTORY + 1) * PROPRIO_DIM + COMMAND_DIM;

/// Joint order: left leg, right leg, waist.
pub const JOINT_NAMES: [&str; LOWER_JOINTS] = [
    "left_hip_pitch",
    "left_hip_roll",
    "left_hip_yaw",
    "left_knee",
    "left_ankle_pitch",
    "left_ankle_roll",
    "right_hip_pitch",
    "right_hip_roll",
    "right_hip_yaw",
    "right_knee",
    "right_ankle_pitch",
    "right_ankle_roll",
    "waist_yaw",
    "waist_roll",
    "waist_pitch",
];

pub type Joints = [f64; LOWER_JOINTS];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FootState {
    pub contact: bool,
    /// Contact force `[x, y, z]` in N.
    pub force: [f64; 3],
    /// Planar foot velocity in m/s.
    pub velocity_xy: [f64; 2],
    pub position: [f64; 3],
    /// Time since the foot left the ground, s.
    pub air_time: f64,
}

impl Default for FootState {
    fn default() -> Self {
        Self { contact: true, force: [0.0; 3], velocity_xy: [0.0; 2], position: [0.0; 3], air_time: 0.0 }
    }
}

/// Simulator state at one control step. `Default` is a standing robot at
/// the default pose: identity orientations, both feet down 0.2 m apart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotState {
    /// Base linear velocity in the yaw-aligned frame, m/s.
    pub base_lin_vel: [f64; 3],
    /// Base angular velocity in the body frame, rad/s.
    pub base_ang_vel: [f64; 3],
    pub projected_gravity: [f64; 3],
    pub q: Joints,
    pub qd: Joints,
    pub qdd: Joints,
    pub torque: Joints,
    pub action: Joints,
    pub prev_action: Joints,
    pub q_default: Joints,
    pub base_height: f64,
    pub torso_quat: Quat,
    pub pelvis_quat: Quat,
    pub feet: [FootState; 2],
    /// Contact forces on every non-foot body, N.
    pub body_contact_forces: Vec<[f64; 3]>,
    pub terminated: bool,
}

impl Default for RobotState {
    fn default() -> Self {
        let mut left = FootState::default();
        let mut right = FootState::default();
        left.position = [0.0, 0.1, 0.0];
        right.position = [0.0, -0.1, 0.0];
        Self {
            base_lin_vel: [0.0; 3],
            base_ang_vel: [0.0; 3],
            projected_gravity: [0.0, 0.0, -1.0],
            q: [0.0; LOWER_JOINTS],
            qd: [0.0; LOWER_JOINTS],
            qdd: [0.0; LOWER_JOINTS],
            torque: [0.0; LOWER_JOINTS],
            action: [0.0; LOWER_JOINTS],
            prev_action: [0.0; LOWER_JOINTS],
            q_default: [0.0; LOWER_JOINTS],
            base_height: 0.75,
            torso_quat: Quat::IDENTITY,
            pelvis_quat: Quat::IDENTITY,
            feet: [left, right],
            body_contact_forces: Vec::new(),
            terminated: false,
        }
    }
}

impl RobotState {
    /// Checks unit gravity and unit quaternions.
    pub fn validate(&self) -> Result<()> {
        let g = self.projected_gravity.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (g - 1.0).abs() > crate::rotation::UNIT_TOLERANCE || !g.is_finite() {
            return Err(LbcError::NonUnitGravity(g));
        }
        self.torso_quat.check_unit("torso")?;
        self.pelvis_quat.check_unit("pelvis")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Command {
    pub vx: f64,
    pub vy: f64,
    pub wz: f64,
    pub height: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Default for Command {
    fn default() -> Self {
        Self { vx: 0.0, vy: 0.0, wz: 0.0, height: 0.75, roll: 0.0, pitch: 0.0, yaw: 0.0 }
    }
}

impl Command {
    /// `[vx, vy, wz, height, roll, pitch, yaw]`.
    pub fn to_array(&self) -> [f64; COMMAND_DIM] {
        [self.vx, self.vy, self.wz, self.height, self.roll, self.pitch, self.yaw]
    }
}

/// `[omega, gravity, q, qdot, previous action]`, 51 values.
pub fn assemble_proprio(state: &RobotState) -> [f64; PROPRIO_DIM] {
    let mut out = [0.0; PROPRIO_DIM];
    let parts: [&[f64]; 5] = [&state.base_ang_vel, &state.projected_gravity, &state.q, &state.qd, &state.prev_action];
    let mut off = 0;
    for p in parts {
        out[off..off + p.len()].copy_from_slice(p);
        off += p.len();
    }
    debug_assert_eq!(off, PROPRIO_DIM);
    out
}

/// `[s(t-2), s(t-1), s(t), command]`, 160 values. `history` is oldest first.
pub fn assemble_student_obs(history: &[Vec<f64>], current: &[f64], command: &Command) -> Result<Vec<f64>> {
    if history.len() != STUDENT_HISTORY {
        return Err(LbcError::Dimension { what: "proprio history", expected: STUDENT_HISTORY, got: history.len() });
    }
    let mut out = Vec::with_capacity(STUDENT_OBS_DIM);
    for frame in history.iter().map(Vec::as_slice).chain(std::iter::once(current)) {
        if frame.len() != PROPRIO_DIM {
            return Err(LbcError::Dimension { what: "proprio frame", expected: PROPRIO_DIM, got: frame.len() });
        }
        out.extend_from_slice(frame);
    }
    out.extend_from_slice(&command.to_array());
    Ok(out)
}

/// Squared L2 distance between student and teacher joint targets.
pub fn dagger_loss(student: &[f64], teacher: &[f64]) -> Result<f64> {
    if student.len() != LOWER_JOINTS || teacher.len() != LOWER_JOINTS {
        let got = if student.len() != LOWER_JOINTS { student.len() } else { teacher.len() };
        return Err(LbcError::Dimension { what: "joint targets", expected: LOWER_JOINTS, got });
    }
    Ok(student.iter().zip(teacher).map(|(s, t)| (s - t) * (s - t)).sum())
}
