//! Unit quaternions `[w, x, y, z]` (body to world) and intrinsic XYZ Euler
//! angles.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{LbcError, Result};

pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat(pub [f64; 4]);

impl Default for Quat {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat([1.0, 0.0, 0.0, 0.0]);

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn check_unit(&self, what: &'static str) -> Result<()> {
        let norm = self.norm();
        if (norm - 1.0).abs() > UNIT_TOLERANCE || !norm.is_finite() {
            return Err(LbcError::NonUnitQuaternion { what, norm });
        }
        Ok(())
    }

    /// Hamilton product `self * other`.
    pub fn mul(&self, other: &Quat) -> Quat {
        let [w1, x1, y1, z1] = self.0;
        let [w2, x2, y2, z2] = other.0;
        Quat([
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ])
    }

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Quat {
        let (s, c) = (angle / 2.0).sin_cos();
        Quat([c, axis[0] * s, axis[1] * s, axis[2] * s])
    }

    /// Rotation by `roll` about x, then `pitch` about the new y, then `yaw`
    /// about the new z.
    pub fn from_intrinsic_xyz(roll: f64, pitch: f64, yaw: f64) -> Quat {
        let qx = Quat::from_axis_angle([1.0, 0.0, 0.0], roll);
        let qy = Quat::from_axis_angle([0.0, 1.0, 0.0], pitch);
        let qz = Quat::from_axis_angle([0.0, 0.0, 1.0], yaw);
        qx.mul(&qy).mul(&qz)
    }

    /// `(roll, pitch, yaw)` such that `R = Rx(roll) Ry(pitch) Rz(yaw)`.
    pub fn to_intrinsic_xyz(&self) -> (f64, f64, f64) {
        let [w, x, y, z] = self.0;
        let roll = (2.0 * (w * x - y * z)).atan2(1.0 - 2.0 * (x * x + y * y));
        let pitch = (2.0 * (w * y + x * z)).clamp(-1.0, 1.0).asin();
        let yaw = (2.0 * (w * z - x * y)).atan2(1.0 - 2.0 * (y * y + z * z));
        (roll, pitch, yaw)
    }

    /// World gravity direction `(0, 0, -1)` expressed in the body frame.
    pub fn projected_gravity(&self) -> [f64; 3] {
        let [w, x, y, z] = self.0;
        [-2.0 * (x * z - w * y), -2.0 * (y * z + w * x), -(1.0 - 2.0 * (x * x + y * y))]
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_hand_values() {
        assert_eq!(wrap_angle(0.5), 0.5);
        assert!((wrap_angle(PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(PI), PI);
    }

    #[test]
    fn identity_has_no_tilt() {
        assert_eq!(Quat::IDENTITY.to_intrinsic_xyz(), (0.0, 0.0, 0.0));
        assert_eq!(Quat::IDENTITY.projected_gravity(), [0.0, 0.0, -1.0]);
    }
}
