use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("not a point on the Stiefel manifold: {0}")]
    NotOrthonormal(String),
    #[error("improper distribution: {0}")]
    Improper(String),
    #[error("h_inv did not converge after {iterations} iterations (residual {residual:.3e}, best iterate {best:?})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },
    #[error("envelope violation at x = {x}: log g = {log_g}, log envelope = {log_env}")]
    EnvelopeViolation { x: f64, log_g: f64, log_env: f64 },
    #[error("rejection sampler gave up after {0} consecutive rejections")]
    TooManyRejections(u64),
    #[error("no interior mode: {0}")]
    NoInteriorMode(String),
    #[error("gibbs iteration {iteration}: {source}")]
    Gibbs {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
