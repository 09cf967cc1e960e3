use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("malformed NIfTI header: {0}")]
    MalformedHeader(String),

    #[error("truncated voxel data: expected {expected} bytes, found {actual}")]
    TruncatedData { expected: usize, actual: usize },

    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("intensity range is degenerate (lower and upper percentile both {0})")]
    DegenerateIntensity(f64),

    #[error("tissue value {value} at voxel {index} outside [0, 3]")]
    ValueOutOfRange { index: usize, value: f64 },

    #[error("voxel {index} mixes non-adjacent tissue classes")]
    NonAdjacentMixture { index: usize },

    #[error("initial patch grid leaves {uncovered} tissue voxels uncovered")]
    CoverageImpossible { uncovered: usize },

    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("deformation folds over: minimum Jacobian determinant {min_jacobian}")]
    JacobianFoldover { min_jacobian: f64 },

    #[error("mask {0} is empty")]
    EmptyMask(&'static str),

    #[error("magnitude {magnitude} out of range for {kind} (allowed {allowed})")]
    MagnitudeOutOfRange {
        kind: &'static str,
        magnitude: f64,
        allowed: &'static str,
    },

    #[error("design matrix is rank deficient")]
    RankDeficientDesign,

    #[error("{maps} maps supplied for {rows} design rows")]
    SubjectCountMismatch { maps: usize, rows: usize },

    #[error("correlation undefined: zero variance")]
    DegenerateVariance,

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{step}: {source}")]
    Step {
        step: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_step(self, step: impl Into<String>) -> Self {
        Error::Step {
            step: step.into(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by user input rather than internal failure.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::NonFiniteLoss { .. } | Error::JacobianFoldover { .. } => false,
            Error::Step { source, .. } => source.is_user_error(),
            _ => true,
        }
    }
}
