use crate::grid::GridSpec;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid spec: {0}")]
    InvalidGrid(String),

    #[error("grid spec mismatch: {a:?} vs {b:?}")]
    SpecMismatch { a: GridSpec, b: GridSpec },

    #[error("mask has no goal pixel (empty goal)")]
    EmptyGoal,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid {h}x{w} violates stride constraint (height and width must be divisible by {stride})")]
    StrideConstraint { h: usize, w: usize, stride: usize },

    #[error("pose outside workspace: ({x:.4}, {y:.4})")]
    PoseOutsideWorkspace { x: f64, y: f64 },

    #[error("degenerate trajectory: all control points identical")]
    DegenerateTrajectory,

    #[error("planning produced no viable candidate: {0}")]
    PlanFailed(String),

    #[error("zero-mass field where mass is required")]
    ZeroMass,

    #[error("bad file format: {0}")]
    BadFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
