use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    /// `m * u - lambda <= 0`: the queue never drains.
    #[error("unstable queue: capacity {capacity} req/s does not exceed arrival rate {arrival} req/s")]
    Unstable { capacity: f64, arrival: f64 },

    #[error("curve fit failed: {0}")]
    Fit(String),

    /// The efficiency curve makes the battery term non-convex at `delta`.
    #[error("convexity certificate fails at delta = {delta}: curvature {value} < 0")]
    Certificate { delta: f64, value: f64 },

    /// A guarantee of the algorithms was violated; indicates a bug.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn infeasible(msg: impl Into<String>) -> Self {
        Error::Infeasible(msg.into())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
