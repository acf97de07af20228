use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A distribution or model parameter lies outside its domain.
    #[error("parameter `{name}` out of domain: {value}")]
    ParameterDomain { name: &'static str, value: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("coordinate out of the manifold's parameter domain: {0}")]
    OutOfDomain(String),

    #[error("non-finite value in term `{term}`")]
    NonFinite { term: String },

    #[error("operation not available in this mode: {0}")]
    Mode(String),

    /// The isotropic case `beta0 == beta_perp` has no noise-limited branch.
    #[error("degenerate rate exponent (beta0 == beta_perp); polynomial branch = {polynomial}")]
    DegenerateRate { polynomial: f64 },

    #[error("numeric failure at iteration {iteration} in `{update}`: {message}")]
    Numeric {
        iteration: usize,
        update: &'static str,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(name: &'static str, value: f64) -> Self {
        Error::ParameterDomain { name, value }
    }

    pub(crate) fn non_finite(term: impl Into<String>) -> Self {
        Error::NonFinite { term: term.into() }
    }
}
