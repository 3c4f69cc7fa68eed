use crate::geometry::FrameId;

/// Errors produced by the navigation engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("frame mismatch: cannot chain a transform ending in {left} with one starting in {right}")]
    FrameMismatch { left: FrameId, right: FrameId },

    #[error("zero-length vector where a direction was required")]
    ZeroVector,

    #[error("invalid quaternion: norm {norm} is not within tolerance of 1")]
    InvalidQuaternion { norm: f64 },

    #[error("ill-conditioned problem: smallest singular value {smallest_singular:.3e}, condition number {condition_number:.3e}")]
    IllConditioned {
        smallest_singular: f64,
        condition_number: f64,
    },

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("length mismatch: {left} model points vs {right} observed points")]
    LengthMismatch { left: usize, right: usize },

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("ambiguous marker correspondence: {candidates} assignments of {matched} markers fit within tolerance")]
    AmbiguousCorrespondence { candidates: usize, matched: usize },

    #[error("tracking failure: matched {matched} markers, need at least {required}")]
    TrackingFailure { matched: usize, required: usize },

    #[error("timestamps out of order: {got} s does not follow {last} s")]
    TimestampOrder { last: f64, got: f64 },

    #[error("time {t} s is outside the interpolation interval [{start}, {end}] s")]
    OutOfRange { t: f64, start: f64, end: f64 },

    #[error("tool line is {angle_deg:.2} deg off the trajectory axis; no stable plane intersection")]
    NoIntersection { angle_deg: f64 },

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("degenerate variance: both groups have zero variance")]
    DegenerateVariance,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by malformed or inconsistent input, as
    /// opposed to numerically degenerate data.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::FrameMismatch { .. }
                | Error::InvalidQuaternion { .. }
                | Error::LengthMismatch { .. }
                | Error::TimestampOrder { .. }
                | Error::OutOfRange { .. }
                | Error::InvalidParameter(_)
                | Error::Parse(_)
                | Error::Json(_)
                | Error::Csv(_)
                | Error::Io(_)
                | Error::EmptyCloud
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
