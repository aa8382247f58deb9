//! Training state and the single optimisation step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Gradients, Graph, Var};
use crate::data::Batch;
use crate::error::{HtdError, Result};
use crate::policy::{Policy, PolicyParams};
use crate::schema::{ActionModality, ModalitySchema, TACTILE_BOTH_HANDS};
use crate::tactile::{RegionId, TeacherEncoderState};
use crate::tensor::Tensor;

use super::config::{TargetMode, TrainConfig};
use super::loss::{bc_loss, force_loss, raw_tactile_loss, tactile_dream_loss, LossBreakdown};
use super::optim::{adam_step, clip_scale, global_grad_norm, AdamMoments};

/// Offset mixed into the run seed for the batch sampler, so sampling and
/// parameter initialisation draw from unrelated streams.
const SAMPLER_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub policy: Policy,
    pub params: PolicyParams,
    pub teacher: TeacherEncoderState,
    pub moments_policy: AdamMoments,
    pub moments_tactile: AdamMoments,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

/// Graph handles of every loss term.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub actions: [Var; 4],
    pub force: Option<Var>,
    pub tact_direction: Option<Var>,
    pub tact_magnitude: Option<Var>,
    pub tact: Option<Var>,
    pub total: Var,
    /// Dreamed forces and tactile latents with their targets, for metrics.
    pub dreamed_force: Option<(Var, Var)>,
    pub dreamed_latent: Option<(Var, Var)>,
}

/// Loss, gradients and a few training-time metrics of one batch.
#[derive(Debug)]
pub struct StepReport {
    pub breakdown: LossBreakdown,
    pub grad_norm: f64,
    /// Mean absolute error of dreamed forces, normalized units.
    pub force_mae: Option<f64>,
    /// Mean `1 / (1 + |z_hat - z*|)` over regions and steps.
    pub latent_similarity: Option<f64>,
}

impl TrainState {
    pub fn new(config: TrainConfig, schema: &ModalitySchema) -> Result<Self> {
        config.validate()?;
        let (policy, params) = Policy::new(&config.policy, schema, config.seed)?;
        let teacher = TeacherEncoderState::from_student(&params.tactile, config.ema_decay)?;
        Ok(Self {
            moments_policy: AdamMoments::zeros(&params.policy),
            moments_tactile: AdamMoments::zeros(&params.tactile),
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ SAMPLER_STREAM),
            config,
            policy,
            params,
            teacher,
            step: 0,
        })
    }

    /// Tactile latent targets `[N, tau, 12, d_z]` for the batch's future
    /// frames. With the EMA teacher these are detached constants.
    pub fn latent_targets(&self, g: &mut Graph, batch: &Batch) -> Var {
        let n = batch.len();
        let tau = batch.dream_horizon();
        let d = self.policy.tactile_encoder().latent_dim();
        let future = g.constant(batch.future_tactile.clone().reshape([n * tau, TACTILE_BOTH_HANDS]));
        let enc = self.policy.tactile_encoder();
        let z = match self.config.targets {
            TargetMode::EmaTeacher => enc.teacher_encode(g, &self.teacher, future),
            TargetMode::LiveStudent => enc.forward(g, &self.params.tactile, future),
        };
        g.reshape(z, &[n, tau, RegionId::COUNT, d])
    }

    /// Builds the full objective on `g`. Teacher targets are computed before
    /// the policy forward pass.
    pub fn build_loss(&self, g: &mut Graph, batch: &Batch) -> Result<LossVars> {
        let cfg = &self.config.loss;
        let h = self.config.policy.horizon;
        let tau = self.config.policy.dream_horizon;
        if batch.horizon() != h || batch.dream_horizon() != tau {
            return Err(HtdError::Shape(format!(
                "batch horizons (h = {}, tau = {}) do not match the model (h = {h}, tau = {tau})",
                batch.horizon(),
                batch.dream_horizon()
            )));
        }
        let variant = self.config.variant();
        let targets = (variant == crate::policy::Variant::DreamLatent).then(|| self.latent_targets(g, batch));

        let obs = Policy::observation_vars(g, &batch.obs);
        let out = self.policy.forward(g, &self.params, &obs);

        let schema = self.policy.action_schema();
        let action_target = g.constant(batch.actions.clone());
        let mut actions = Vec::with_capacity(4);
        for (&m, &pred) in ActionModality::ALL.iter().zip(out.actions.iter()) {
            let t = g.narrow(action_target, 2, schema.offset(m), schema.dim(m));
            actions.push(bc_loss(g, pred, t, cfg.delta)?);
        }
        let actions = [actions[0], actions[1], actions[2], actions[3]];
        let mut total = g.add(actions[0], actions[1]);
        total = g.add(total, actions[2]);
        total = g.add(total, actions[3]);

        let mut vars = LossVars {
            actions,
            force: None,
            tact_direction: None,
            tact_magnitude: None,
            tact: None,
            total,
            dreamed_force: None,
            dreamed_latent: None,
        };
        if let Some(d) = out.dreams {
            let ft = g.constant(batch.future_force.clone());
            let lf = force_loss(g, d.force, ft, cfg.delta)?;
            let wf = g.scale(lf, cfg.lambda_force);
            vars.total = g.add(vars.total, wf);
            vars.force = Some(lf);
            vars.dreamed_force = Some((d.force, ft));
            if let (Some(zhat), Some(zstar)) = (d.latent, targets) {
                let tl = tactile_dream_loss(g, zhat, zstar, cfg.beta, cfg.delta)?;
                vars.tact_direction = Some(tl.direction);
                vars.tact_magnitude = Some(tl.magnitude);
                vars.tact = Some(tl.total);
                vars.dreamed_latent = Some((zhat, zstar));
            }
            if let Some(raw) = d.raw_tactile {
                let rt = g.constant(batch.future_tactile.clone());
                vars.tact = Some(raw_tactile_loss(g, raw, rt, cfg.delta)?);
            }
            if let Some(t) = vars.tact {
                let wt = g.scale(t, cfg.lambda_tactile);
                vars.total = g.add(vars.total, wt);
            }
        }
        Ok(vars)
    }

    pub fn breakdown(g: &Graph, v: &LossVars) -> LossBreakdown {
        let val = |x: Option<Var>| x.map_or(0.0, |x| g.value(x).item());
        LossBreakdown {
            act_end_effector: g.value(v.actions[0]).item(),
            act_torso: g.value(v.actions[1]).item(),
            act_velocity: g.value(v.actions[2]).item(),
            act_hand: g.value(v.actions[3]).item(),
            force: val(v.force),
            tact_direction: val(v.tact_direction),
            tact_magnitude: val(v.tact_magnitude),
            tact: val(v.tact),
            total: g.value(v.total).item(),
        }
    }

    /// Loss and gradients without touching the state.
    pub fn loss_and_grads(&self, batch: &Batch) -> Result<(LossBreakdown, Gradients, StepReport)> {
        let mut g = Graph::new();
        let vars = self.build_loss(&mut g, batch)?;
        let breakdown = Self::breakdown(&g, &vars);
        if !breakdown.is_finite() {
            return Err(HtdError::NonFinite { step: self.step, breakdown: format!("{breakdown:?}") });
        }
        let grads = g.backward(vars.total);
        let grad_norm = global_grad_norm(&grads, &[&self.params.policy, &self.params.tactile]);
        let force_mae = vars.dreamed_force.map(|(p, t)| {
            let (p, t) = (g.value(p), g.value(t));
            p.data().iter().zip(t.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64
        });
        let latent_similarity = vars.dreamed_latent.map(|(p, t)| {
            let (p, t) = (g.value(p), g.value(t));
            let d = *p.shape().last().unwrap();
            let sims: Vec<f64> = p
                .data()
                .chunks(d)
                .zip(t.data().chunks(d))
                .map(|(a, b)| crate::eval::latent_similarity(a, b))
                .collect();
            sims.iter().sum::<f64>() / sims.len() as f64
        });
        let report = StepReport { breakdown: breakdown.clone(), grad_norm, force_mae, latent_similarity };
        Ok((breakdown, grads, report))
    }

    /// Loss on `batch` at the current parameters.
    pub fn evaluate(&self, batch: &Batch) -> Result<LossBreakdown> {
        let mut g = Graph::new();
        let vars = self.build_loss(&mut g, batch)?;
        Ok(Self::breakdown(&g, &vars))
    }

    /// One step: teacher targets, forward, loss, backward, clipped Adam update
    /// of the student, EMA update of the teacher, step counter.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepReport> {
        let (_, grads, report) = self.loss_and_grads(batch)?;
        let scale = clip_scale(report.grad_norm, self.config.grad_clip);
        let t = self.step + 1;
        let lr = self.config.learning_rate;
        adam_step(&mut self.params.policy, &mut self.moments_policy, &grads, lr, t, scale);
        adam_step(&mut self.params.tactile, &mut self.moments_tactile, &grads, lr, t, scale);
        self.teacher.update(&self.params.tactile)?;
        self.step = t;
        Ok(report)
    }

    /// Teacher latents `[frames, 12, d_z]` for raw tactile frames `[frames, 2124]`.
    pub fn teacher_latents(&self, frames: &Tensor) -> Tensor {
        let mut g = Graph::new();
        let x = g.constant(frames.clone());
        let z = self.policy.tactile_encoder().forward(&mut g, &self.teacher.params, x);
        g.value(z).clone()
    }

    /// Latents the tactile targets are drawn from under the configured mode.
    pub fn target_encoder_params(&self) -> &crate::params::ParamStore {
        match self.config.targets {
            TargetMode::EmaTeacher => &self.teacher.params,
            TargetMode::LiveStudent => &self.params.tactile,
        }
    }
}
