use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the measurement, learning, and reporting stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid Zernike index {0} (Noll indices start at 1)")]
    InvalidIndex(i64),

    #[error("radius {0} lies outside the unit disc")]
    Domain(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("ill-conditioned least-squares problem: {0}")]
    Conditioning(String),

    #[error("calibration set is not identifiable: {0}")]
    Identifiability(String),

    #[error("degenerate gain estimate in channel {channel}: 1 + g = {value}")]
    DegenerateGain { channel: usize, value: f64 },

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("degenerate channel {0}: zero standard deviation")]
    DegenerateChannel(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("format version mismatch in {path}: expected {expected}, found {found}")]
    VersionMismatch {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("digest mismatch in {path}: recorded {recorded}, computed {computed}")]
    DigestMismatch {
        path: PathBuf,
        recorded: String,
        computed: String,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the command-line front end.
    ///
    /// 2: invalid flags or configuration, 3: numeric failure, 4: I/O or format error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::Numeric(_)
            | Error::Conditioning(_)
            | Error::DegenerateGain { .. }
            | Error::DegenerateChannel(_) => 3,
            Error::VersionMismatch { .. }
            | Error::Truncated { .. }
            | Error::DigestMismatch { .. }
            | Error::Format { .. }
            | Error::Io(_)
            | Error::Json(_) => 4,
            _ => 2,
        }
    }

    pub(crate) fn in_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
