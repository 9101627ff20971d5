use std::path::PathBuf;

use thiserror::Error;

use crate::optics::Led;

pub type Result<T> = std::result::Result<T, FpmError>;

#[derive(Debug, Error)]
pub enum FpmError {
    #[error("invalid optical configuration: {0}")]
    InvalidConfig(String),

    #[error("LED ({}, {}) is not part of the grid", .0.row, .0.col)]
    LedOutsideGrid(Led),

    #[error("no illumination: LED set is empty")]
    NoIllumination,

    #[error("pupil under-resolved: radius {0:.3} px < 2 px")]
    PupilUnderResolved(f64),

    #[error("illumination NA exceeds model band for LED ({}, {})", .0.row, .0.col)]
    ExceedsModelBand(Led),

    #[error("negative NA step {0}")]
    NegativeStep(f64),

    #[error("objective NA too small for this grid: overlap {overlap:.4} < {min_overlap:.4} even without decimation")]
    OverlapTooSmall { overlap: f64, min_overlap: f64 },

    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("frame for LED ({}, {}) is already cosine-compensated", .0.row, .0.col)]
    AlreadyCompensated(Led),

    #[error("nonpositive prediction at pixel ({0}, {1})")]
    NonPositivePrediction(usize, usize),

    #[error("rectangle {0:?} lies outside the {1}x{2} frame")]
    RectOutOfBounds(crate::noise::Rect, usize, usize),

    #[error("segment {0:?} -> {1:?} leaves the {2}x{3} image")]
    SegmentOutOfBounds((f64, f64), (f64, f64), usize, usize),

    #[error("edge ring is pure noise; shrink grid")]
    EdgeRingPureNoise,

    #[error("threshold excludes all data")]
    ThresholdExcludesAll,

    #[error("threshold must be finite, got {0}")]
    NonFiniteThreshold(f64),

    #[error("data mismatch: {0}")]
    DataMismatch(String),

    #[error("missing input {}", .0.display())]
    MissingInput(PathBuf),

    #[error("config error: {0}")]
    ConfigParse(String),

    #[error("malformed file {}: {msg}", .path.display())]
    Format { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl FpmError {
    /// Process exit code used by the `fpm` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            FpmError::ConfigParse(_)
            | FpmError::InvalidConfig(_)
            | FpmError::PupilUnderResolved(_)
            | FpmError::OverlapTooSmall { .. }
            | FpmError::NonFiniteThreshold(_)
            | FpmError::NegativeStep(_)
            | FpmError::NoIllumination => 1,
            FpmError::MissingInput(_) => 2,
            FpmError::ThresholdExcludesAll | FpmError::EdgeRingPureNoise => 3,
            FpmError::DataMismatch(_)
            | FpmError::LedOutsideGrid(_)
            | FpmError::Format { .. }
            | FpmError::ExceedsModelBand(_)
            | FpmError::ShapeMismatch(..)
            | FpmError::Empty(_)
            | FpmError::AlreadyCompensated(_)
            | FpmError::NonPositivePrediction(..)
            | FpmError::RectOutOfBounds(..)
            | FpmError::SegmentOutOfBounds(..) => 4,
            // unexpected I/O failures
            FpmError::Io(_) | FpmError::Csv(_) => 5,
        }
    }
}
