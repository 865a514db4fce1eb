use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed scan: {0}")]
    MalformedScan(String),

    #[error("malformed label file: {0}")]
    MalformedLabel(String),

    #[error("malformed pose: {0}")]
    MalformedPose(String),

    #[error("malformed calibration: {0}")]
    MalformedCalib(String),

    #[error("malformed config: {0}")]
    MalformedConfig(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("degenerate registration source: {0}")]
    DegenerateSource(String),

    #[error("no overlap between source and target within {max_dist} m")]
    NoOverlap { max_dist: f64 },

    #[error("instance {instance_id} not found in scan {scan}")]
    InstanceNotFound { instance_id: u16, scan: usize },

    #[error("missing labels for scan {0}")]
    MissingLabels(usize),

    #[error("scan index {scan} out of range for sequence of {len} scans")]
    ScanOutOfRange { scan: usize, len: usize },

    #[error("failed to write instance database at {path}: {source}")]
    DbWriteError {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot sample from an empty instance database")]
    EmptyDatabase,

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("numeric error: {0}")]
    NumericError(String),

    #[error("degenerate instance with {0} points (need at least 2)")]
    DegenerateInstance(usize),

    #[error("class {class} out of range for {n_classes} classes")]
    ClassRangeError { class: u32, n_classes: usize },

    #[error("no class has a nonzero IoU denominator")]
    NoValidClasses,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
