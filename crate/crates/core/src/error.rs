use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A simulated path produced a non-finite value.
    #[error("numerical divergence at step {step}{}", path.map(|p| format!(" (path {p})")).unwrap_or_default())]
    Divergence { step: usize, path: Option<usize> },

    /// Every particle weight vanished.
    #[error("particle collapse: all weights are zero")]
    ParticleCollapse,

    #[error("intermediate step {step}: {source}")]
    AtIntermediateStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("observation {index}: {source}")]
    AtObservation {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training iteration {iteration} (seed {seed}): {source}")]
    AtIteration {
        iteration: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid observation: {0}")]
    InvalidObservation(String),

    #[error("time {t} outside the admissible range [0, {horizon}{}", if *.closed { "]" } else { ")" })]
    TimeOutOfRange { t: f64, horizon: f64, closed: bool },

    #[error("closed-form oracle unavailable: {0}")]
    OracleUnavailable(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_observation(self, index: usize) -> Self {
        Error::AtObservation {
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_intermediate(self, step: usize) -> Self {
        Error::AtIntermediateStep {
            step,
            source: Box::new(self),
        }
    }

    pub(crate) fn on_path(self, path: usize) -> Self {
        match self {
            Error::Divergence { step, .. } => Error::Divergence {
                step,
                path: Some(path),
            },
            other => other,
        }
    }
}
