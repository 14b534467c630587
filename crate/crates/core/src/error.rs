use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument outside the domain of the operation (e.g. z <= 0).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("point behind the camera (z = {z})")]
    BehindCamera { z: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("calibration is missing the P2 matrix")]
    MissingP2,

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("no depth estimates supplied")]
    EmptyEstimates,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsatisfiable scene spec: {0}")]
    Unsatisfiable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
