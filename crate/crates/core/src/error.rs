use thiserror::Error;

/// Errors surfaced by the toolkit.
///
/// Variants follow the failure classes callers need to distinguish:
/// bad numeric input, unsupported configuration, broken shape contracts,
/// and data or training problems.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("capability error: {0}")]
    Capability(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("unknown instruction: {0}")]
    Vocabulary(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("schema error at record {record}: {message}")]
    Schema { record: usize, message: String },
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! contract {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err($crate::Error::Contract(format!($($arg)*)));
        }
    };
}
pub(crate) use contract;
