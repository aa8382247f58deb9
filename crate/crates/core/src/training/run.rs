//! The outer training loop, metrics log and end-of-run summary.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::data::{sample_training_batch, valid_indices, Dataset};
use crate::error::{HtdError, Result};
use crate::eval::{dataset_collapse_metric, rollout_dream_trace, LatentTargets, PolicyDreams, RunSummary};

use super::checkpoint::save_checkpoint;
use super::config::TrainConfig;
use super::loss::LossBreakdown;
use super::state::{StepReport, TrainState};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Serialize)]
struct MetricsRow {
    step: u64,
    act_end_effector: f64,
    act_torso: f64,
    act_velocity: f64,
    act_hand: f64,
    force: f64,
    tact_direction: f64,
    tact_magnitude: f64,
    tact: f64,
    total: f64,
    grad_norm: f64,
    force_mae: Option<f64>,
    latent_similarity: Option<f64>,
}

impl MetricsRow {
    fn new(step: u64, r: &StepReport) -> Self {
        let b = &r.breakdown;
        Self {
            step,
            act_end_effector: b.act_end_effector,
            act_torso: b.act_torso,
            act_velocity: b.act_velocity,
            act_hand: b.act_hand,
            force: b.force,
            tact_direction: b.tact_direction,
            tact_magnitude: b.tact_magnitude,
            tact: b.tact,
            total: b.total,
            grad_norm: r.grad_norm,
            force_mae: r.force_mae,
            latent_similarity: r.latent_similarity,
        }
    }
}

struct MetricsLog {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl MetricsLog {
    fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(METRICS_FILE);
        let fresh = !path.exists();
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| HtdError::io(&path, e))?;
        let writer = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        Ok(Self { path, writer })
    }

    fn append(&mut self, row: MetricsRow) -> Result<()> {
        self.writer.serialize(row)?;
        self.writer.flush().map_err(|e| HtdError::io(&self.path, e))
    }
}

/// Options for [`train`] beyond the config.
#[derive(Default)]
pub struct RunOptions<'a> {
    /// Where metrics, checkpoints and the summary go; nothing is written when
    /// unset.
    pub out_dir: Option<&'a Path>,
    /// Called after every step.
    pub on_step: Option<&'a mut dyn FnMut(u64, &StepReport)>,
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub summary: RunSummary,
    /// Breakdown of every step, in order.
    pub history: Vec<LossBreakdown>,
}

/// Trains from scratch for `config.steps` steps.
pub fn train(config: TrainConfig, ds: &Dataset, opts: RunOptions<'_>) -> Result<TrainOutcome> {
    let state = TrainState::new(config, &ds.schema)?;
    resume(state, ds, opts)
}

/// Continues training `state` until `state.config.steps`.
pub fn resume(mut state: TrainState, ds: &Dataset, mut opts: RunOptions<'_>) -> Result<TrainOutcome> {
    let cfg = state.config.clone();
    let (h, tau) = (cfg.policy.horizon, cfg.policy.dream_horizon);
    if valid_indices(&ds.episodes, h, tau).is_empty() {
        return Err(HtdError::Data(format!("no episode is long enough for h = {h}, tau = {tau}")));
    }
    if ds.schema != *state.policy.schema() {
        return Err(HtdError::Schema("dataset schema differs from the model's".into()));
    }
    let mut log = match opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| HtdError::io(dir, e))?;
            Some(MetricsLog::open(dir)?)
        }
        None => None,
    };
    let mut history = Vec::new();
    while state.step < cfg.steps {
        let batch = sample_training_batch(ds, cfg.batch_size, h, tau, &mut state.rng)?;
        let report = state.train_step(&batch)?;
        let step = state.step;
        if let Some(log) = log.as_mut() {
            if cfg.log_every > 0 && (step % cfg.log_every == 0 || step == 1 || step == cfg.steps) {
                log.append(MetricsRow::new(step, &report))?;
            }
        }
        if let (Some(dir), true) = (opts.out_dir, cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
            save_checkpoint(&state, Some(&ds.stats), &dir.join(format!("checkpoint_{step:06}")))?;
        }
        if let Some(f) = opts.on_step.as_mut() {
            f(step, &report);
        }
        history.push(report.breakdown);
    }
    let summary = summarize(&state, ds, &history)?;
    if let Some(dir) = opts.out_dir {
        save_checkpoint(&state, Some(&ds.stats), &dir.join(CHECKPOINT_DIR))?;
        summary.write(dir)?;
    }
    Ok(TrainOutcome { state, summary, history })
}

/// Dream accuracy over every episode and the collapse score of the encoder
/// that supplies tactile targets.
pub fn summarize(state: &TrainState, ds: &Dataset, history: &[LossBreakdown]) -> Result<RunSummary> {
    let variant = state.config.variant();
    let tau = state.config.policy.dream_horizon;
    let targets = LatentTargets { encoder: state.policy.tactile_encoder(), params: state.target_encoder_params() };
    let (mut mae, mut sim) = (None, None);
    if variant.dreams() {
        let source = PolicyDreams { policy: &state.policy, params: &state.params };
        let (mut maes, mut sims) = (Vec::new(), Vec::new());
        for e in 0..ds.episodes.len() {
            if ds.episodes[e].len() <= tau {
                continue;
            }
            let trace = rollout_dream_trace(&source, ds, e, tau, tau, Some(targets))?;
            maes.push((trace.force_mae[0] + trace.force_mae[1]) / 2.0);
            sims.extend(trace.mean_similarity());
        }
        mae = mean(&maes);
        sim = mean(&sims);
    }
    let collapse = if variant.touch_inputs() { dataset_collapse_metric(ds, targets).ok() } else { None };
    Ok(RunSummary {
        variant,
        steps: state.step,
        initial: history.first().cloned().unwrap_or_default(),
        last: history.last().cloned().unwrap_or_default(),
        dream_force_mae: mae,
        latent_similarity: sim,
        collapse_metric: collapse,
    })
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}
