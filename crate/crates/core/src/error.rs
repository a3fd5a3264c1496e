use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not converge: achieved {achieved:e}, wanted {wanted:e} ({context})")]
    Quadrature {
        achieved: f64,
        wanted: f64,
        context: String,
    },

    #[error("value {value:e} is outside the tabulated range [{lo:e}, {hi:e}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("invalid domain: {0}")]
    Geometry(String),

    #[error("invalid model: {0}")]
    Model(String),

    #[error("refused: {0}")]
    Refused(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
