use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A matrix was not positive definite or a linear solve broke down.
    #[error("numerical error at pivot {pivot}: {message}")]
    Numerical { pivot: usize, message: String },

    /// The MCMC sampler could not produce a finite state.
    #[error("sampler error: {message} (state: {state:?})")]
    Sampler { message: String, state: Vec<f64> },

    /// Posterior estimation failed, e.g. every importance weight vanished.
    #[error("inference error: {0}")]
    Inference(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
