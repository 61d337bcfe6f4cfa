use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("candidate {0} is already selected")]
    AlreadySelected(usize),

    #[error("exhaustive search too large: {0}")]
    InstanceTooLarge(String),

    #[error("non-finite value in {term} term (epoch {epoch}, step {step})")]
    NonFinite {
        term: &'static str,
        epoch: usize,
        step: usize,
    },

    #[error("oracle asked to label id {0}, which is not in the unlabeled pool")]
    OracleOutOfPool(usize),

    #[error("{path}, row {row}: {message}")]
    MalformedRow {
        path: String,
        row: usize,
        message: String,
    },

    #[error("schema error in {path}: {message}")]
    Schema { path: String, message: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (configs, files, arguments),
    /// false for runtime/numerics failures. The CLI maps the former to exit
    /// code 1 and the latter to 2.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::NonFinite { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
