use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("extent along {axis} ({extent} m) is not a whole multiple of the voxel size {size} m")]
    NonDivisibleExtent { axis: char, extent: f64, size: f64 },
    #[error("voxel index {index} is out of range for a grid of {len} voxels")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("requested {requested} scatterers but the grid only has {capacity} voxels")]
    TooManyScatterers { requested: usize, capacity: usize },
    #[error("segment endpoints coincide")]
    ZeroLengthSegment,
    #[error("propagation distance must be positive, got {0}")]
    CoincidentNodes(f64),
    #[error("SNR is undefined for an all-zero multipath channel")]
    ZeroSignal,
    #[error("pilot length {pilot_len} must exceed the number of users {users}")]
    PilotTooShort { pilot_len: usize, users: usize },
    #[error("channel ensemble has no noisy observation; call observe() first")]
    MissingObservation,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("mask selects no voxels")]
    EmptyMask,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("no records to plot")]
    EmptyRecords,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("plot rendering failed: {0}")]
    Plot(String),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { path: path.into(), message: message.into() }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidParameter(message.into())
    }
}
