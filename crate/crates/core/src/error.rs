use thiserror::Error;

/// Errors raised by the cocycle machinery.
#[derive(Debug, Error)]
pub enum Error {
    /// A scenario or parameter is invalid. `field` names the offending input.
    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },

    /// An index fell outside the realized window of the base path.
    #[error("{0}; regenerate the path with a larger window")]
    WindowExhausted(String),

    /// Mismatched shapes or misuse of an API.
    #[error("usage error: {0}")]
    Usage(String),

    /// A numerical routine failed to converge or produced a non-finite value.
    #[error("numerical failure: {0}")]
    Numeric(String),

    /// The normalizing eigenvalue collapsed; the twist parameter is outside
    /// the region where the leading eigendata is analytic.
    #[error("degenerate twisted eigenvalue |lambda| = {modulus:e} at fiber {fiber} (theta = {theta})")]
    Degenerate {
        fiber: i64,
        theta: String,
        modulus: f64,
    },

    /// Limit-theorem harnesses need a strictly positive variance.
    #[error("degenerate variance sigma^2 = {0}; the normal limit is a point mass")]
    DegenerateVariance(f64),

    /// A harness declined to run because its hypothesis is not met.
    #[error("refused: {0}")]
    Refused(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
