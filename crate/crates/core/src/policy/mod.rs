//! Encoder-decoder policy: modality tokenizers, transformer trunk, per-modality
//! action experts and the dream experts used only during training.

mod config;
mod model;
mod tokenizers;

pub use config::{OutputTokens, PolicyConfig, Variant};
pub use model::{ActionChunks, DreamOutput, Expert, ObservationVars, Policy, PolicyOutput, PolicyParams};
pub use tokenizers::{ImageTokenizer, StateTokenizer, TactileTokenizer};
