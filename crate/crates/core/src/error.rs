use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the scheduling library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("failed to parse {what}: {message}")]
    Parse { what: String, message: String },

    #[error("invalid catalog: {0}")]
    Catalog(String),

    #[error("invalid trace at frame {frame}: {message}")]
    Trace { frame: u64, message: String },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("unknown accelerator `{0}`")]
    UnknownAccelerator(String),

    #[error("empty trace")]
    EmptyTrace,

    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),

    #[error("invalid image: {0}")]
    Image(String),

    #[error("bounding box {0} lies outside the {1}x{2} frame")]
    BoxOutsideFrame(String, u32, u32),

    #[error("model `{model}` is not compatible with accelerator `{accelerator}`")]
    IncompatiblePair { model: String, accelerator: String },

    #[error("model `{model}` needs {required} bytes but `{accelerator}` only has {capacity}")]
    ExceedsCapacity {
        model: String,
        accelerator: String,
        required: u64,
        capacity: u64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            what: what.into(),
            message: message.to_string(),
        }
    }
}
