//! Uniform command and domain-randomization sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LbcError, Result};
use crate::state::{Command, LOWER_JOINTS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn symmetric(b: f64) -> Self {
        Self { lo: -b, hi: b }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    fn check(&self, name: &'static str) -> Result<()> {
        if !(self.lo <= self.hi) {
            return Err(LbcError::InvertedRange { name, lo: self.lo, hi: self.hi });
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandRanges {
    pub vx: Range,
    pub vy: Range,
    pub wz: Range,
    pub height: Range,
    pub roll: Range,
    pub pitch: Range,
    pub yaw: Range,
}

impl Default for CommandRanges {
    fn default() -> Self {
        Self {
            vx: Range::symmetric(0.5),
            vy: Range::symmetric(0.5),
            wz: Range::symmetric(1.57),
            height: Range::new(0.35, 0.8),
            roll: Range::symmetric(0.7),
            pitch: Range::new(-0.52, 1.57),
            yaw: Range::symmetric(1.57),
        }
    }
}

impl CommandRanges {
    fn named(&self) -> [(&'static str, Range); 7] {
        [
            ("vx", self.vx),
            ("vy", self.vy),
            ("wz", self.wz),
            ("height", self.height),
            ("roll", self.roll),
            ("pitch", self.pitch),
            ("yaw", self.yaw),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        self.named().iter().try_for_each(|(n, r)| r.check(n))
    }

    pub fn contains(&self, c: &Command) -> bool {
        self.named().iter().zip(c.to_array()).all(|((_, r), v)| r.contains(v))
    }
}

/// Independent uniform draw per command dimension.
pub fn sample_command<R: Rng + ?Sized>(rng: &mut R, ranges: &CommandRanges) -> Result<Command> {
    ranges.validate()?;
    Ok(Command {
        vx: ranges.vx.sample(rng),
        vy: ranges.vy.sample(rng),
        wz: ranges.wz.sample(rng),
        height: ranges.height.sample(rng),
        roll: ranges.roll.sample(rng),
        pitch: ranges.pitch.sample(rng),
        yaw: ranges.yaw.sample(rng),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomizationRanges {
    pub ang_vel_noise: Range,
    pub gravity_noise: Range,
    pub joint_pos_noise: Range,
    pub joint_vel_noise: Range,
    pub static_friction: Range,
    pub dynamic_friction: Range,
    pub restitution: Range,
    pub base_mass_delta: Range,
}

impl Default for RandomizationRanges {
    fn default() -> Self {
        Self {
            ang_vel_noise: Range::symmetric(0.2),
            gravity_noise: Range::symmetric(0.05),
            joint_pos_noise: Range::symmetric(0.01),
            joint_vel_noise: Range::symmetric(1.5),
            static_friction: Range::new(0.6, 1.0),
            dynamic_friction: Range::new(0.4, 0.8),
            restitution: Range::new(0.0, 0.005),
            base_mass_delta: Range::symmetric(5.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainRandomization {
    pub ang_vel_noise: [f64; 3],
    pub gravity_noise: [f64; 3],
    pub joint_pos_noise: [f64; LOWER_JOINTS],
    pub joint_vel_noise: [f64; LOWER_JOINTS],
    pub static_friction: f64,
    pub dynamic_friction: f64,
    pub restitution: f64,
    pub base_mass_delta: f64,
}

impl DomainRandomization {
    pub fn within(&self, r: &RandomizationRanges) -> bool {
        self.ang_vel_noise.iter().all(|&v| r.ang_vel_noise.contains(v))
            && self.gravity_noise.iter().all(|&v| r.gravity_noise.contains(v))
            && self.joint_pos_noise.iter().all(|&v| r.joint_pos_noise.contains(v))
            && self.joint_vel_noise.iter().all(|&v| r.joint_vel_noise.contains(v))
            && r.static_friction.contains(self.static_friction)
            && r.dynamic_friction.contains(self.dynamic_friction)
            && r.restitution.contains(self.restitution)
            && r.base_mass_delta.contains(self.base_mass_delta)
    }
}

pub fn sample_domain_randomization<R: Rng + ?Sized>(rng: &mut R) -> DomainRandomization {
    sample_domain_randomization_in(rng, &RandomizationRanges::default())
}

pub fn sample_domain_randomization_in<R: Rng + ?Sized>(rng: &mut R, r: &RandomizationRanges) -> DomainRandomization {
    DomainRandomization {
        ang_vel_noise: std::array::from_fn(|_| r.ang_vel_noise.sample(rng)),
        gravity_noise: std::array::from_fn(|_| r.gravity_noise.sample(rng)),
        joint_pos_noise: std::array::from_fn(|_| r.joint_pos_noise.sample(rng)),
        joint_vel_noise: std::array::from_fn(|_| r.joint_vel_noise.sample(rng)),
        static_friction: r.static_friction.sample(rng),
        dynamic_friction: r.dynamic_friction.sample(rng),
        restitution: r.restitution.sample(rng),
        base_mass_delta: r.base_mass_delta.sample(rng),
    }
}
