//! Tracking-error metrics averaged over a trajectory.

use serde::{Deserialize, Serialize};

use crate::error::{LbcError, Result};
use crate::reward::torso_angles;
use crate::rotation::wrap_angle;
use crate::state::{Command, RobotState};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackingErrors {
    /// Planar velocity error in the yaw-aligned frame, m/s.
    pub e_v: f64,
    /// Yaw-rate error, rad/s.
    pub e_w: f64,
    /// Height error, m.
    pub e_h: f64,
    /// Torso-relative-to-pelvis yaw error, rad.
    pub e_y: f64,
    /// Absolute torso pitch error, rad.
    pub e_p: f64,
    /// Torso-relative-to-pelvis roll error, rad.
    pub e_r: f64,
}

impl TrackingErrors {
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "e_v" => self.e_v,
            "e_w" => self.e_w,
            "e_h" => self.e_h,
            "e_y" => self.e_y,
            "e_p" => self.e_p,
            "e_r" => self.e_r,
            _ => return None,
        })
    }
}

pub fn step_errors(state: &RobotState, command: &Command) -> Result<TrackingErrors> {
    state.validate()?;
    let (d_roll, pitch, d_yaw) = torso_angles(state);
    let v = &state.base_lin_vel;
    Ok(TrackingErrors {
        e_v: ((v[0] - command.vx).powi(2) + (v[1] - command.vy).powi(2)).sqrt(),
        e_w: (state.base_ang_vel[2] - command.wz).abs(),
        e_h: (state.base_height - command.height).abs(),
        e_y: wrap_angle(d_yaw - command.yaw).abs(),
        e_p: wrap_angle(pitch - command.pitch).abs(),
        e_r: wrap_angle(d_roll - command.roll).abs(),
    })
}

/// Mean of the per-step errors over `(state, command)` pairs.
pub fn tracking_errors(trajectory: &[(RobotState, Command)]) -> Result<TrackingErrors> {
    if trajectory.is_empty() {
        return Err(LbcError::EmptyTrajectory);
    }
    let mut acc = TrackingErrors::default();
    for (s, c) in trajectory {
        let e = step_errors(s, c)?;
        acc.e_v += e.e_v;
        acc.e_w += e.e_w;
        acc.e_h += e.e_h;
        acc.e_y += e.e_y;
        acc.e_p += e.e_p;
        acc.e_r += e.e_r;
    }
    let n = trajectory.len() as f64;
    Ok(TrackingErrors {
        e_v: acc.e_v / n,
        e_w: acc.e_w / n,
        e_h: acc.e_h / n,
        e_y: acc.e_y / n,
        e_p: acc.e_p / n,
        e_r: acc.e_r / n,
    })
}
