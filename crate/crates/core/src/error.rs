use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the generator, codec and evaluation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid geometry: {0}")]
    InvalidGeometry(String),

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimMismatch { left: [usize; 3], right: [usize; 3] },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("structuring element of radius {radius} exceeds grid {dims:?}")]
    StructuringElementTooLarge { radius: usize, dims: [usize; 3] },

    #[error("sub-resolution tumor: semi-axis {axis_mm} mm is below one voxel ({spacing_mm} mm)")]
    SubResolution { axis_mm: f64, spacing_mm: f64 },

    #[error("liver mask is empty")]
    EmptyLiver,

    #[error("mask is empty")]
    EmptyMask,

    #[error("shape bounding box {shape:?} does not fit inside liver bounding box {liver:?}")]
    ShapeTooLarge { shape: [usize; 3], liver: [usize; 3] },

    #[error("no valid tumor location after {attempts} attempts")]
    PlacementExhausted { attempts: usize },

    #[error("could not produce an acceptable deformed shape after {attempts} attempts")]
    ShapeRejected { attempts: usize },

    #[error("zero variance: cannot normalize a constant volume")]
    ZeroVariance,

    #[error("empty input")]
    EmptyInput,

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("unsupported file format: {0}")]
    UnsupportedFormat(String),

    #[error("corrupt NIfTI header: {0}")]
    CorruptHeader(String),

    #[error("invalid label value {0} (expected 0, 1 or 2)")]
    InvalidLabel(u8),

    #[error("metric {0:?} not present in trajectory")]
    MissingMetric(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("epoch grids differ between validation and test trajectories")]
    EpochGridMismatch,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
