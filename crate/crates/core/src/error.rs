use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("dimension mismatch on {axis}: expected {expected}, found {found}")]
    Dimension {
        axis: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{value} is outside the domain {domain}")]
    Domain { value: f64, domain: String },

    #[error("matrix is not positive (semi)definite: {0}")]
    NotPositiveDefinite(String),

    #[error("covariance matrix is ill-conditioned (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{failed} of {total} paths failed, above the 1% budget")]
    PathFailureBudget { failed: usize, total: usize },

    #[error("ensemble too small: {n_paths} paths (need at least {min})")]
    DegenerateEnsemble { n_paths: usize, min: usize },
}

impl Error {
    pub(crate) fn parameter(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }
}
