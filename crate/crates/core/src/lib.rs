//! Multimodal behaviour-cloning policy with touch dreaming: data schema and
//! synthetic demonstrations, tactile region encoders with an EMA teacher, the
//! encoder-decoder policy with action and dream experts, training and offline
//! evaluation.

pub mod autograd;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod params;
pub mod policy;
pub mod schema;
pub mod tactile;
pub mod tensor;
pub mod training;

pub use error::{HtdError, Result};
pub use tensor::Tensor;
