use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },

    #[error("numerical overflow: {0}")]
    Overflow(String),

    #[error("invalid grouping structure: {}", .0.join("; "))]
    Grouping(Vec<String>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line search failed: step size {step:e} fell below the floor after {backtracks} backtracks")]
    LineSearch { step: f64, backtracks: usize },

    #[error("flow recursion exceeded {limit} splits")]
    RecursionLimit { limit: usize },

    #[error("fold {fold} contains no events")]
    EmptyFold { fold: usize },

    #[error("fit failed at lambda {lambda}: {source}")]
    AtLambda {
        lambda: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("replication {replication}: {source}")]
    AtReplication {
        replication: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
