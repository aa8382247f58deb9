//! Behaviour cloning with touch dreaming: losses, the optimiser, the training
//! step and loop, and checkpoints.

mod checkpoint;
mod config;
mod loss;
mod optim;
mod run;
mod state;

pub use checkpoint::{
    load_checkpoint, read_checkpoint_manifest, save_checkpoint, CheckpointManifest, CHECKPOINT_MANIFEST,
    CHECKPOINT_PARAMS,
};
pub use config::{TargetMode, TrainConfig};
pub use loss::{
    bc_loss, force_loss, raw_tactile_loss, tactile_dream_loss, LossBreakdown, LossConfig, TactileLoss, COSINE_EPS,
};
pub use optim::{adam_step, clip_scale, global_grad_norm, AdamMoments, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use run::{resume, summarize, train, RunOptions, TrainOutcome, CHECKPOINT_DIR, METRICS_FILE};
pub use state::{LossVars, StepReport, TrainState};
