use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure modes surfaced by the library.
///
/// Variants fall into three families that the command-line driver maps onto
/// exit codes: validation (1), I/O and file format (2), and numerical (3).
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate pair: feature difference norm {norm:e} is below {eps:e}")]
    DegeneratePair { norm: f64, eps: f64 },

    #[error("no admissible {0} left to sample")]
    Exhausted(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("verification failed: {0}")]
    CheckFailed(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("truncated input while reading {0}")]
    Truncated(&'static str),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("checkpoint layer `{layer}` has shape {got:?}, architecture expects {expected:?}")]
    LayerShape {
        layer: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
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

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ShapeMismatch { .. }
            | Error::InvalidArgument(_)
            | Error::Config(_)
            | Error::Exhausted(_) => 1,
            Error::BadMagic { .. }
            | Error::UnsupportedVersion { .. }
            | Error::Truncated(_)
            | Error::Malformed(_)
            | Error::LayerShape { .. }
            | Error::Io { .. } => 2,
            Error::DegeneratePair { .. } | Error::NonFinite(_) | Error::CheckFailed(_) => 3,
        }
    }
}
