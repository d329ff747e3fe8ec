use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("gaussian is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },

    #[error("invalid camera rig: {0}")]
    InvalidRig(String),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("render output is stale: rendered at iteration {rendered}, model at {model}")]
    StaleForward { rendered: u64, model: u64 },

    #[error("unknown volume kind `{0}`")]
    UnknownKind(String),

    #[error("isovalue {iso} outside open range ({min}, {max})")]
    IsovalueOutOfRange { iso: f64, min: f64, max: f64 },

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("cannot cut {points} points into {partitions} partitions")]
    TooManyPartitions { partitions: usize, points: usize },

    #[error("{models} models for {partitions} partitions")]
    MismatchedCounts { models: usize, partitions: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("image {width}x{height} smaller than the {window}px window")]
    TooSmall { width: usize, height: usize, window: usize },

    #[error("no training views")]
    NoViews,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("band mask selects no foreground pixels")]
    EmptyBand,

    #[error("no foreground pixels outside the band")]
    EmptyInterior,

    #[error("no run matches the baseline config `{0}`")]
    MissingBaseline(String),

    #[error("worker for partition {id} failed: {reason}")]
    WorkerFailure { id: usize, reason: String },

    #[error("worker for partition {id} timed out after {seconds:.1}s")]
    Timeout { id: usize, seconds: f64 },

    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
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
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::MalformedFile { path: path.into(), reason: reason.into() }
    }

    /// Stable identifier used in machine-parsable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::BehindCamera { .. } => "BehindCamera",
            Error::InvalidRig(_) => "InvalidRig",
            Error::InvalidCamera(_) => "InvalidCamera",
            Error::StaleForward { .. } => "StaleForward",
            Error::UnknownKind(_) => "UnknownKind",
            Error::IsovalueOutOfRange { .. } => "IsovalueOutOfRange",
            Error::InvalidVolume(_) => "InvalidVolume",
            Error::EmptyCloud => "EmptyCloud",
            Error::TooManyPartitions { .. } => "TooManyPartitions",
            Error::MismatchedCounts { .. } => "MismatchedCounts",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::TooSmall { .. } => "TooSmall",
            Error::NoViews => "NoViews",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::EmptyBand => "EmptyBand",
            Error::EmptyInterior => "EmptyInterior",
            Error::MissingBaseline(_) => "MissingBaseline",
            Error::WorkerFailure { .. } => "WorkerFailure",
            Error::Timeout { .. } => "Timeout",
            Error::ManifestMismatch(_) => "ManifestMismatch",
            Error::MalformedFile { .. } => "MalformedFile",
            Error::Io { .. } => "IoError",
            Error::Json(_) => "MalformedFile",
        }
    }
}
