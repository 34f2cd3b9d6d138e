use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv row {row}: {msg}")]
    Csv { row: usize, msg: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("enumeration guard exceeded: {size} > {guard}")]
    GuardExceeded { size: u128, guard: u128 },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("numerical failure in LP solver: {0}")]
    Numerical(String),

    #[error("time limit reached without a feasible incumbent")]
    NoIncumbent,

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
