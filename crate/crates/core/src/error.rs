use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value {value} at frame {frame}, channel {channel}, pixel ({row}, {col})")]
    NonFinite {
        frame: usize,
        channel: usize,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error("region index {index} out of range [0, {limit}) at frame {frame}, pixel ({row}, {col})")]
    RegionIndexOutOfRange {
        frame: usize,
        row: usize,
        col: usize,
        index: u32,
        limit: usize,
    },

    #[error("label {label} at pixel ({row}, {col}) is not a class in [0, {classes}) nor the ignore value")]
    InvalidLabel {
        row: usize,
        col: usize,
        label: u32,
        classes: usize,
    },

    #[error("frame {frame} out of range for a sequence of {frames} frames")]
    FrameOutOfRange { frame: usize, frames: usize },

    #[error("object {object} leaves the grid at frame {frame}")]
    ObjectLeavesGrid { object: usize, frame: usize },

    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),

    #[error("no {direction} flow field for step {from} -> {to}")]
    MissingFlowField {
        direction: &'static str,
        from: usize,
        to: usize,
    },

    #[error("non-canonical superpixels: {0}")]
    NonCanonical(String),

    #[error("region {region} is not present in any frame")]
    NoPresentFrame { region: usize },

    #[error("target pixel ({row}, {col}) maps to region {region}, which has no pooled value")]
    MissingRegionValue { row: usize, col: usize, region: usize },

    #[error("every pixel is ignored")]
    AllPixelsIgnored,

    #[error("confusion matrix is empty")]
    EmptyMatrix,

    #[error("frame mismatch: {0}")]
    FrameMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("model file not found: {0}")]
    MissingModel(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("internal invariant violated: {0}")]
    Internal(String),
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

    /// Process exit code for this error: 1 validation, 2 I/O, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Format { .. } | Error::MissingModel(_) => 2,
            Error::Internal(_) => 3,
            _ => 1,
        }
    }
}
