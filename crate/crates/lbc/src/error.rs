use thiserror::Error;

#[derive(Debug, Error)]
pub enum LbcError {
    #[error("{what}: expected {expected} values, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("{what} quaternion is not unit-norm (|q| = {norm})")]
    NonUnitQuaternion { what: &'static str, norm: f64 },
    #[error("projected gravity is not unit-norm (|g| = {0})")]
    NonUnitGravity(f64),
    #[error("range {name} is inverted: [{lo}, {hi}]")]
    InvertedRange { name: &'static str, lo: f64, hi: f64 },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("case file: {0}")]
    Cases(String),
}

pub type Result<T> = std::result::Result<T, LbcError>;
