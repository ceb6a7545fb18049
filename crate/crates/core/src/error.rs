use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch at {layer}: expected {expected:?}, found {found:?}")]
    Shape {
        layer: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("incompatible layers {first} -> {second}: {reason}")]
    IncompatibleLayers {
        first: String,
        second: String,
        reason: String,
    },

    #[error("parameter layout mismatch: {0}")]
    Layout(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("permutation sampler exhausted after {attempts} attempts (width {width}, {drawn} distinct samples)")]
    SamplerExhausted {
        width: usize,
        drawn: usize,
        attempts: usize,
    },

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("objectives were evaluated on different batches ({base:016x} vs {candidate:016x})")]
    BatchMismatch { base: u64, candidate: u64 },

    #[error("expansion is not function-preserving: {0}")]
    NotPreserved(String),

    #[error("dataset error at byte {offset}: {reason}")]
    Dataset { offset: usize, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error (line {line}): {reason}")]
    Config { line: usize, reason: String },

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
