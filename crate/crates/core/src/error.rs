use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A matrix handed to the Cholesky factorization is not positive definite.
    #[error("matrix is not positive definite: pivot {index} is {pivot:e}")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid design: {0}")]
    Design(String),

    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("learner fit failed: {0}")]
    Fit(String),

    /// Coordinate descent hit its sweep cap. Carries the last iterate.
    #[error("coordinate descent did not converge in {sweeps} sweeps (max KKT violation {max_kkt_violation:e})")]
    Convergence {
        sweeps: usize,
        coefficients: Vec<f64>,
        max_kkt_violation: f64,
    },

    #[error("fold {fold}: {source}")]
    FoldFit {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    /// Sum of squared treatment residuals is zero, so the score is flat and
    /// the condition number is undefined.
    #[error("degenerate score: sum of squared treatment residuals is zero")]
    DegenerateScore,

    #[error("oracle nuisances are not available for this dataset")]
    MissingOracle,

    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::InvalidArgument(_) | Error::Config(_) | Error::Design(_))
    }
}
