use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("support size mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    /// The reference distribution is zero where the first argument has mass,
    /// so the divergence (or log-expectation) is infinite.
    #[error("absolute continuity violated at outcome {index}: divergence is infinite")]
    AbsoluteContinuity { index: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("observation {0} has zero marginal probability")]
    ImpossibleObservation(usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-positive gap {gap} m to leader")]
    DegenerateGap { gap: f64 },

    #[error("zero distance between vehicles {a} and {b}")]
    DegenerateProximity { a: usize, b: usize },

    #[error("invalid state: {0}")]
    State(String),

    #[error("placement failed for seed {seed}: {reason}")]
    Placement { seed: u64, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user configuration rather than runtime failure.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Domain(_) | Error::Placement { .. } | Error::Json { .. }
        )
    }
}
