//! Tactile patch layout, region encoders and the EMA teacher encoder.

mod encoder;
mod layout;

pub use encoder::{ema_update, TactileEncoder, TactileEncoderConfig, TeacherEncoderState};
pub use layout::{Hand, Patch, Region, RegionId, RegionLayout};
