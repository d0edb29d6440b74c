use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("cannot encode {path}: {message}")]
    Encode { path: PathBuf, message: String },

    #[error("unsupported channel count {0} (expected 1 or 3)")]
    UnsupportedChannels(usize),

    #[error("sample value {value} exceeds {max} for {bits}-bit sensor data")]
    SampleRange { value: u32, max: u32, bits: u32 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("model format error: {0}")]
    ModelFormat(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("training diverged at epoch {epoch} (lr {lr:e}): {reason}")]
    Diverged { epoch: usize, lr: f64, reason: String },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Short machine-readable category, used in CLI failure lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Decode { .. } => "decode",
            Error::Encode { .. } => "encode",
            Error::UnsupportedChannels(_) => "channels",
            Error::SampleRange { .. } => "sample-range",
            Error::ShapeMismatch(_) => "shape",
            Error::InvalidArgument(_) => "argument",
            Error::InvalidTopology(_) => "topology",
            Error::ModelFormat(_) => "model-format",
            Error::Dataset(_) => "dataset",
            Error::Diverged { .. } => "diverged",
            Error::Config(_) => "config",
        }
    }
}
