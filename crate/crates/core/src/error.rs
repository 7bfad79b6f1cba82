use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("severity {0} is outside the open interval (0, 1)")]
    SeverityOutOfRange(f64),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("design matrix is rank deficient; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("perfect separation detected: {0}")]
    Separation(String),

    #[error("parameter `{0}` is not identified by the data")]
    NotIdentified(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("bootstrap failed: {dropped} of {total} replicates did not converge")]
    Bootstrap { dropped: usize, total: usize },

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("missing columns in {file}: {}", .columns.join(", "))]
    MissingColumns { file: String, columns: Vec<String> },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
