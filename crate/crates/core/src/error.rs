use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
///
/// Each variant corresponds to one failure kind that callers (and the CLI's
/// exit codes) distinguish.
#[derive(Debug, Error)]
pub enum Error {
    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("compatibility error: {0}")]
    Compatibility(String),

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

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

    /// Prefixes the message with a 1-based line number, keeping the kind.
    pub fn at_line(self, line: usize) -> Self {
        let tag = |m: String| format!("line {line}: {m}");
        match self {
            Error::Encoding(m) => Error::Encoding(tag(m)),
            Error::Format(m) => Error::Format(tag(m)),
            Error::Input(m) => Error::Input(tag(m)),
            Error::Shape(m) => Error::Shape(tag(m)),
            Error::Index(m) => Error::Index(tag(m)),
            Error::Numeric(m) => Error::Numeric(tag(m)),
            Error::Compatibility(m) => Error::Compatibility(tag(m)),
            Error::Alignment(m) => Error::Alignment(tag(m)),
            Error::Config(m) => Error::Config(tag(m)),
            other => other,
        }
    }

    /// Process exit code for this error kind: 1 usage/config, 2 data/format,
    /// 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) => 1,
            Error::Numeric(_) => 3,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
