use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file content. `line` is 1-based when present.
    #[error("{}", format_location(.path, .line, .message))]
    Format {
        path: Option<PathBuf>,
        line: Option<usize>,
        message: String,
    },

    #[error("dump entry `{text_id}`: {message}")]
    Dump { text_id: String, message: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("layer {layer} out of range 0..={max}")]
    LayerOutOfRange { layer: usize, max: usize },

    #[error("{0}")]
    Numeric(String),

    #[error("{0}")]
    Invalid(String),

    #[error("{0}")]
    Usage(String),

    #[error("example {index}: {source}")]
    Example {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn format_location(path: &Option<PathBuf>, line: &Option<usize>, message: &str) -> String {
    match (path, line) {
        (Some(p), Some(l)) => format!("{}:{}: {}", p.display(), l, message),
        (Some(p), None) => format!("{}: {}", p.display(), message),
        (None, Some(l)) => format!("line {}: {}", l, message),
        (None, None) => message.to_string(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(message: impl Into<String>) -> Self {
        Error::Format {
            path: None,
            line: None,
            message: message.into(),
        }
    }

    pub(crate) fn format_at(path: &std::path::Path, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: Some(path.to_path_buf()),
            line: Some(line),
            message: message.into(),
        }
    }

    /// Process exit code: 1 usage, 2 input format, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Numeric(_) | Error::DimensionMismatch { .. } => 3,
            Error::Example { source, .. } => source.exit_code(),
            Error::Io { .. }
            | Error::Format { .. }
            | Error::Dump { .. }
            | Error::LayerOutOfRange { .. }
            | Error::Invalid(_)
            | Error::Json(_) => 2,
        }
    }
}
