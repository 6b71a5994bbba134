use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error at data row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("validation error at data row {row}, field `{field}`: {message}")]
    Validation {
        row: usize,
        field: String,
        message: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("design matrix is rank deficient; supply a_beta/B_beta manually")]
    RankDeficient,

    #[error("AFT fit did not converge within {0} Newton iterations; supply a_beta/B_beta manually")]
    NonConvergence(usize),

    #[error("non-finite state detected: {0}")]
    NonFinite(String),

    #[error("posterior scale matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("landmark beyond effective support: {0}")]
    Positivity(String),

    #[error("quantile beyond numeric range: {0}")]
    BracketExceeded(String),

    #[error("empty subgroup support: {0}")]
    EmptySupport(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("replicate failures exceeded threshold: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error("{context}: {source}")]
    DrawContext {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Tag an error with the posterior draw index it arose from.
    pub fn at_draw(self, draw_index: usize) -> Error {
        Error::DrawContext {
            context: format!("draw {draw_index}"),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
