use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("item {item} is degenerate: {reason}")]
    DegenerateItem { item: usize, reason: String },

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
    },

    #[error("domain {domain} has no sampled persons")]
    EmptyDomain { domain: usize },

    #[error("domain {domain} has a single sampled person; variance is undefined")]
    SingletonDomain { domain: usize },

    #[error("need at least 2 imputations, got {0}")]
    TooFewImputations(usize),

    #[error("design matrix is singular: {0}")]
    SingularDesign(String),

    #[error("auxiliary matrix is singular in domain {domain}")]
    SingularAux { domain: usize },

    #[error("MSE components were computed under {computed} but {requested} was requested")]
    MethodMismatch {
        computed: &'static str,
        requested: &'static str,
    },

    #[error("domain {domain}: estimate is zero, relative error undefined")]
    ZeroEstimate { domain: usize },

    #[error(
        "achieved correlation {achieved:.3} outside the {level} band after {attempts} attempts"
    )]
    CorrelationMiss {
        level: &'static str,
        achieved: f64,
        attempts: usize,
    },

    #[error("schema error in {path}: {message}")]
    Schema { path: String, message: String },

    #[error("value error in {path}, row {row}, column `{column}`: {message}")]
    Value {
        path: String,
        row: usize,
        column: String,
        message: String,
    },

    #[error("rank error: {0}")]
    Rank(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    /// Numerical failures, as opposed to bad input. The CLI maps these to a
    /// distinct exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::SingularDesign(_)
                | Error::SingularAux { .. }
                | Error::CorrelationMiss { .. }
        )
    }
}
