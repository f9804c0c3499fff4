use thiserror::Error;

/// Errors raised by the fitting engine, the experiment harness and the file readers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Residual and between-cluster sums of squares are both zero; the restricted
    /// likelihood has no finite maximizer.
    #[error("degenerate data: residual and between-cluster sums of squares are zero")]
    DegenerateData,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors caused by the content of user-supplied data rather than by
    /// the environment (I/O) or by misuse of the API.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::DegenerateData
                | Error::NonFinite(_)
                | Error::RankDeficient(_)
                | Error::Singular(_)
                | Error::Parse { .. }
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
