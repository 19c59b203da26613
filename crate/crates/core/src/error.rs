use thiserror::Error;

/// Errors raised by model construction and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// A game, strategy, mixture or CMDP description failed validation.
    /// `path` locates the offending key, e.g. `transitions[3].next`.
    #[error("invalid spec at `{path}`: {message}")]
    Spec { path: String, message: String },

    /// An enumeration or belief expansion outgrew its configured cap.
    #[error("{what} exceeds the size cap of {cap}")]
    SizeCap { what: &'static str, cap: usize },

    /// A strategy was queried on an augmented state outside its table.
    #[error("strategy for agent(s) {agents:?} is undefined on augmented state {state}")]
    UndefinedState { agents: Vec<usize>, state: String },

    /// Arguments that are individually valid but do not fit together.
    #[error("{0}")]
    Mismatch(String),

    /// A belief update met an observation that no remaining type can produce.
    #[error("observation {0} has zero likelihood under every remaining support member")]
    InconsistentObservation(String),

    /// A root finder or solver could not produce a result.
    #[error("{0}")]
    NoSolution(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn spec(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Spec {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn mismatch(message: impl Into<String>) -> Self {
        Error::Mismatch(message.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
