use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("numeric error in {op}: non-finite value produced")]
    Numeric { op: &'static str },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("cannot partition {axis} axis: extent {extent} is not divisible by {block}")]
    Partition {
        axis: &'static str,
        extent: usize,
        block: usize,
    },

    #[error("parse error at {location}: {detail}")]
    Parse { location: String, detail: String },

    #[error("checkpoint checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) | Error::Partition { .. } | Error::Shape { .. } => 1,
            Error::Numeric { .. } => 3,
            Error::Parse { .. }
            | Error::Checksum { .. }
            | Error::Incompatible(_)
            | Error::Data(_)
            | Error::Io { .. } => 2,
        }
    }
}
