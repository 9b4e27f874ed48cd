use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of a numeric kernel.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed or inconsistent user input (scenario, plan, ids).
    #[error("invalid input: {0}")]
    Input(String),

    /// A caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Should not happen; carries diagnostics for a bug report.
    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
