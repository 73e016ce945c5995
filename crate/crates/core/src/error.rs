use thiserror::Error;

/// Errors raised by the modelling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    /// Invalid configuration or input schema.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// Not enough usable observations for the requested fit.
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    /// A covariance lost positive semi-definiteness or went non-finite.
    #[error("numerical failure at t={t}: {msg}")]
    Numerical { t: usize, msg: String },
    /// Innovation variance was not strictly positive.
    #[error("degenerate model at t={t}: innovation variance {q}")]
    Degenerate { t: usize, q: f64 },
    /// Intercept bisection for a missingness mechanism did not reach the target rate.
    #[error("missing-rate calibration failed: achieved {achieved:.4} for target {target:.4}")]
    Calibration { achieved: f64, target: f64 },
    /// An error raised inside an outer imputation iteration.
    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Strip iteration wrappers and return the innermost error.
    pub fn root(&self) -> &Error {
        match self {
            Error::Iteration { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Error {
        Error::Iteration { iteration, source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
