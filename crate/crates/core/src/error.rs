use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A CSV cell could not be parsed. `row` is 1-based over data rows.
    #[error("row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    /// A table or input violates a stated invariant.
    #[error("invalid data: {0}")]
    Invariant(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value outside domain: {0}")]
    Domain(String),

    #[error("cannot enrich: empty phase-2 stratum {stratum} (n_k = {phase1_count}, m_k = 0)")]
    EmptyPhase2Stratum { stratum: usize, phase1_count: usize },

    #[error("zero denominator in {0}")]
    ZeroDenominator(String),

    #[error("singular matrix in {0}")]
    Singular(String),

    #[error("complete or quasi-complete separation: coefficient norm {norm:.3e} exceeds limit")]
    Separation { norm: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("jackknife replicate for group {group} failed: {source}")]
    Replicate {
        group: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{failed} of {total} replications failed (limit 1%); first error: {first}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the error stems from bad user input rather than a numerical
    /// failure. The CLI maps the former to exit code 2 and the latter to 1.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Config(_)
                | Error::Schema(_)
                | Error::Invariant(_)
                | Error::InvalidArgument(_)
                | Error::Domain(_)
                | Error::Csv(_)
        )
    }
}
