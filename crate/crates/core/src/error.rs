use thiserror::Error;

/// Errors surfaced by the simulator and its harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates one of its invariants. The message
    /// names the offending key.
    #[error("{0}")]
    InvalidConfig(String),

    #[error("failed to parse configuration: {0}")]
    Parse(String),

    #[error("unknown detector profile `{0}`")]
    UnknownProfile(String),

    /// Caller broke a documented precondition (unsorted input, length
    /// mismatch, out-of-range argument).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("sifted key is empty; QBER is undefined")]
    EmptyKey,

    #[error("no signal: predicted accepted rate is zero")]
    NoSignal,

    #[error("sweep run failed at {coordinates}: {source}")]
    Sweep {
        coordinates: String,
        #[source]
        source: Box<Error>,
    },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
