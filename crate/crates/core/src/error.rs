//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by tensor ops, the autodiff graph, and the pipeline
/// stages built on top of them.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar root, got shape {shape:?}")]
    RootNotScalar { shape: Vec<usize> },

    #[error("gradient shape mismatch for {name}: param {param:?} vs grad {grad:?}")]
    GradShapeMismatch {
        name: String,
        param: Vec<usize>,
        grad: Vec<usize>,
    },

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("depth must be strictly positive")]
    NonPositiveDepth,

    #[error("photometric loss has no valid pixels")]
    NoValidPixels,

    #[error("non-monotone timestamp: {prev} followed by {next}")]
    NonMonotoneTimestamp { prev: f64, next: f64 },

    #[error("{0}")]
    InvalidConfig(String),

    #[error("trajectory leaves the textured volume at frame {frame}")]
    TrajectoryOutOfBounds { frame: usize },

    #[error("trajectory too short for all segment lengths")]
    TrajectoryTooShort,

    #[error("missing checkpoint for adaptation step {step}")]
    MissingCheckpoint { step: usize },

    #[error("continual report is missing cell ({row}, {col})")]
    MissingCell { row: usize, col: usize },

    #[error("velocity data required: {0}")]
    MissingSpeeds(String),

    #[error("parse error in {file} line {line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(String),
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Image(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
