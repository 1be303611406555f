use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("value {value} at cell {index} is outside [0, 1]")]
    ValueOutOfRange { index: usize, value: f64 },
    #[error("non-finite value at cell {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("point ({x}, {y}) is outside the {w}x{h} grid")]
    OutOfBounds { x: f64, y: f64, w: usize, h: usize },
    #[error("trajectory times must be strictly increasing (got {next} after {last})")]
    NonIncreasingTime { last: i64, next: i64 },
    #[error("trajectory has no points")]
    EmptyTrajectory,
    #[error("homography is singular (|det| = {0:e})")]
    SingularHomography(f64),
    #[error("point maps to infinity (w = {0:e})")]
    PointAtInfinity(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("loss diverged at epoch {epoch}: {value}")]
    Divergence { epoch: usize, value: f64 },
    #[error("frame gap {gap} is outside 1..={max_gap}")]
    GapViolation { gap: i64, max_gap: usize },
    #[error("instance too large for brute force: {0} detections (max 10)")]
    InstanceTooLarge(usize),
    #[error("covariance is not symmetric positive definite")]
    NonSpdCovariance,
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("MOTA is undefined without ground truth objects")]
    UndefinedMota,
    #[error("no ground truth cells to evaluate")]
    EmptyReport,
    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
