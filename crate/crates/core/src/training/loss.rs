//! Loss terms.
//!
//! * Action and force losses: smooth L1 averaged over every element
//!   (samples x steps x dims).
//! * Tactile latent loss: `(1 - cos(z_hat, z*)) + beta * smooth_l1(|z_hat| - |z*|)`
//!   averaged over samples x steps x regions, with `1e-8` added to both norms
//!   in the cosine.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{HtdError, Result};

pub const COSINE_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda_force: f64,
    pub lambda_tactile: f64,
    /// Weight of the latent magnitude term.
    pub beta: f64,
    /// Smooth L1 transition point.
    pub delta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda_force: 1.0, lambda_tactile: 1.0, beta: 0.5, delta: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = [("lambda_force", self.lambda_force), ("lambda_tactile", self.lambda_tactile), ("beta", self.beta)];
        for (name, v) in finite_nonneg {
            if !v.is_finite() || v < 0.0 {
                return Err(HtdError::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(HtdError::Config(format!("delta must be positive, got {}", self.delta)));
        }
        Ok(())
    }
}

fn same_shape(g: &Graph, a: Var, b: Var, what: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(HtdError::Shape(format!("{what}: prediction {:?} vs target {:?}", g.shape(a), g.shape(b))));
    }
    Ok(())
}

/// Mean smooth L1 between a predicted and a target action chunk.
pub fn bc_loss(g: &mut Graph, pred: Var, target: Var, delta: f64) -> Result<Var> {
    same_shape(g, pred, target, "bc_loss")?;
    let e = g.smooth_l1(pred, target, delta);
    Ok(g.mean_all(e))
}

/// Mean smooth L1 between dreamed and recorded future forces.
pub fn force_loss(g: &mut Graph, pred: Var, target: Var, delta: f64) -> Result<Var> {
    same_shape(g, pred, target, "force_loss")?;
    let e = g.smooth_l1(pred, target, delta);
    Ok(g.mean_all(e))
}

#[derive(Clone, Copy, Debug)]
pub struct TactileLoss {
    pub direction: Var,
    pub magnitude: Var,
    /// `direction + beta * magnitude`.
    pub total: Var,
}

/// Latent loss over vectors along the last axis of `pred` and `target`.
pub fn tactile_dream_loss(g: &mut Graph, pred: Var, target: Var, beta: f64, delta: f64) -> Result<TactileLoss> {
    same_shape(g, pred, target, "tactile_dream_loss")?;
    let pn = g.norm_last(pred);
    let tn = g.norm_last(target);
    let prod = g.mul(pred, target);
    let dot = g.sum_last(prod);
    let pe = g.add_scalar(pn, COSINE_EPS);
    let te = g.add_scalar(tn, COSINE_EPS);
    let denom = g.mul(pe, te);
    let cos = g.div(dot, denom);
    let mean_cos = g.mean_all(cos);
    let neg = g.scale(mean_cos, -1.0);
    let direction = g.add_scalar(neg, 1.0);
    let mag = g.smooth_l1(pn, tn, delta);
    let magnitude = g.mean_all(mag);
    let weighted = g.scale(magnitude, beta);
    let total = g.add(direction, weighted);
    Ok(TactileLoss { direction, magnitude, total })
}

/// Smooth L1 between raw dreamed tactile frames and recorded ones.
pub fn raw_tactile_loss(g: &mut Graph, pred: Var, target: Var, delta: f64) -> Result<Var> {
    same_shape(g, pred, target, "raw_tactile_loss")?;
    let e = g.smooth_l1(pred, target, delta);
    Ok(g.mean_all(e))
}

/// Scalar values of every loss term for one batch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub act_end_effector: f64,
    pub act_torso: f64,
    pub act_velocity: f64,
    pub act_hand: f64,
    pub force: f64,
    pub tact_direction: f64,
    pub tact_magnitude: f64,
    pub tact: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn bc(&self) -> f64 {
        self.act_end_effector + self.act_torso + self.act_velocity + self.act_hand
    }

    /// Recomputes the weighted total from the components.
    pub fn weighted_sum(&self, cfg: &LossConfig) -> f64 {
        self.bc() + cfg.lambda_force * self.force + cfg.lambda_tactile * self.tact
    }

    pub fn is_finite(&self) -> bool {
        [
            self.act_end_effector,
            self.act_torso,
            self.act_velocity,
            self.act_hand,
            self.force,
            self.tact_direction,
            self.tact_magnitude,
            self.tact,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn eval(pred: Tensor, target: Tensor, f: impl Fn(&mut Graph, Var, Var) -> Var) -> f64 {
        let mut g = Graph::new();
        let p = g.constant(pred);
        let t = g.constant(target);
        let l = f(&mut g, p, t);
        g.value(l).item()
    }

    #[test]
    fn huber_hand_values() {
        let zero = Tensor::zeros([1, 1, 1]);
        let bc = |r: f64| eval(Tensor::full([1, 1, 1], r), zero.clone(), |g, p, t| bc_loss(g, p, t, 1.0).unwrap());
        assert_eq!(bc(0.5), 0.125);
        assert_eq!(bc(3.0), 2.5);
        assert_eq!(bc(0.0), 0.0);
        // one sample, two dream steps with residuals 0.5 and 3
        let f = eval(Tensor::new([1, 2, 1], vec![0.5, 3.0]), Tensor::zeros([1, 2, 1]), |g, p, t| {
            force_loss(g, p, t, 1.0).unwrap()
        });
        assert_eq!(f, 1.3125);
    }

    #[test]
    fn tactile_hand_values() {
        let z = Tensor::new([1, 1, 1, 2], vec![0.6, 0.8]);
        let run = |pred: Tensor| {
            let mut g = Graph::new();
            let p = g.constant(pred);
            let t = g.constant(z.clone());
            let l = tactile_dream_loss(&mut g, p, t, 0.5, 1.0).unwrap();
            (g.value(l.direction).item(), g.value(l.magnitude).item(), g.value(l.total).item())
        };
        let (d, m, t) = run(z.clone());
        assert!(d.abs() < 1e-7 && m == 0.0 && t.abs() < 1e-7);
        let (d, m, t) = run(z.map(|v| 2.0 * v));
        assert!(d.abs() < 1e-7);
        assert_eq!(m, 0.5);
        assert!((t - 0.25).abs() < 1e-7);
        let (d, m, _) = run(z.map(|v| -v));
        assert!((d - 2.0).abs() < 1e-7);
        assert_eq!(m, 0.0);
    }

    #[test]
    fn zero_latents_stay_finite() {
        let mut g = Graph::new();
        let p = g.input(Tensor::zeros([2, 3]));
        let t = g.constant(Tensor::zeros([2, 3]));
        let l = tactile_dream_loss(&mut g, p, t, 0.5, 1.0).unwrap();
        assert_eq!(g.value(l.total).item(), 1.0);
        let grads = g.backward(l.total);
        assert!(grads.input(p).unwrap().all_finite());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::zeros([2, 3]));
        let t = g.constant(Tensor::zeros([3, 2]));
        assert!(bc_loss(&mut g, p, t, 1.0).is_err());
        assert!(tactile_dream_loss(&mut g, p, t, 0.5, 1.0).is_err());
    }
}
