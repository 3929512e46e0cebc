//! Crate-wide error type with a stable mapping to process exit codes.

use std::path::PathBuf;

/// All failure modes surfaced by the library and the CLI.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shape or axis mismatch. Always names the shapes involved.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Invalid configuration value or unknown key/name.
    #[error("config error: {0}")]
    Config(String),

    /// A caller broke a documented call contract (bad label, bad index,
    /// non-scalar loss, mismatched sequence length).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed dataset or checkpoint bytes.
    #[error("format error: {0}")]
    Format(String),

    /// Non-finite value where the numeric contract requires finite ones.
    #[error("numeric abort: {0}")]
    Numeric(String),

    /// Filesystem failure, annotated with the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class: 2 config, 3 data/format/io,
    /// 4 numeric abort. Contract and dimension bugs also map to 2 since they
    /// reach the CLI only through bad configuration.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Contract(_) | Error::Dimension(_) => 2,
            Error::Format(_) | Error::Io { .. } => 3,
            Error::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
