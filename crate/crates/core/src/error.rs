use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input lies outside the domain where the quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A parameter set violates its structural invariants.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// An adaptive quadrature exhausted its subdivision budget.
    #[error(
        "quadrature did not converge after {subdivisions} subdivisions \
         (value {value:e}, error estimate {error:e})"
    )]
    NonConvergence {
        value: f64,
        error: f64,
        subdivisions: usize,
    },

    /// An integrand produced NaN or an infinity.
    #[error("integrand is not finite at {at:e}")]
    NonFinite { at: f64 },

    /// A test function is discontinuous too close to the evaluation point.
    #[error("singularity: {0}")]
    Singularity(String),

    /// The thinning majorant no longer dominates the kernel.
    #[error("stale majorant: kernel value {value:e} exceeds majorant {majorant:e} at state {state:?}")]
    StaleMajorant {
        value: f64,
        majorant: f64,
        state: Vec<f64>,
    },

    /// Too many simulated paths hit the event budget.
    #[error("{exhausted} of {total} paths exhausted the event budget (limit {limit_fraction})")]
    BudgetExceeded {
        exhausted: usize,
        total: usize,
        limit_fraction: f64,
    },

    /// A log-log fit could not be formed.
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("unknown assumption id `{0}`")]
    UnknownAssumption(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{kind}: {source}")]
    Experiment {
        kind: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
