use thiserror::Error;

/// Errors raised anywhere in the discretisation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("internal consistency violated: {0}")]
    InternalConsistency(String),

    #[error("sliver search failed: {0}")]
    SearchFailure(String),

    #[error("active region is disconnected: {0} cut cells cannot reach an interior cell")]
    DisconnectedActiveRegion(usize),

    #[error("no interior cell available to root an aggregate")]
    NoRoot,

    #[error("linear solver failed: {0}")]
    SolverFailure(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialisation error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Configuration-level errors, as opposed to numerical failures.
    pub fn is_configuration(&self) -> bool {
        matches!(self, Error::InvalidArgument(_))
    }

    pub fn is_solver_failure(&self) -> bool {
        matches!(self, Error::SolverFailure(_))
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
