//! Lower-body controller kernels for a humanoid: proprioceptive and student
//! observations, the distillation loss, every reward term, command and
//! domain-randomization sampling, and tracking-error metrics.
//!
//! All functions are pure. Angles use intrinsic XYZ Euler decomposition and
//! angle errors are wrapped to `(-pi, pi]`.

pub mod cases;
pub mod error;
pub mod metrics;
pub mod reference;
pub mod reward;
pub mod rotation;
pub mod sampling;
pub mod state;

pub use error::{LbcError, Result};
pub use metrics::{step_errors, tracking_errors, TrackingErrors};
pub use reward::{reward_breakdown, RewardBreakdown, RewardConfig, RewardTerm};
pub use rotation::{wrap_angle, Quat};
pub use sampling::{sample_command, sample_domain_randomization, CommandRanges, DomainRandomization};
pub use state::{assemble_proprio, assemble_student_obs, dagger_loss, Command, FootState, RobotState};
