use thiserror::Error;

/// Errors raised anywhere in the simulation and verification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed argument (non-finite value, negative where nonnegative is required, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// A documented precondition does not hold, e.g. `phi` on a model with negative jumps.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The Lévy model itself is inconsistent.
    #[error("invalid model: {0}")]
    Model(String),

    /// The model is valid but outside what an operation supports.
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    /// Experiment or configuration file problem.
    #[error("configuration error: {0}")]
    Config(String),

    /// Broken internal invariant (mismatched grids and the like).
    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

pub(crate) fn precondition<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Precondition(msg.into()))
}
