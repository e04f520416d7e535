use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {what} (need at least {needed}, got {got})")]
    InsufficientData {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    /// The maximum-likelihood score has no admissible root.
    #[error("estimation failed: no real root of the score in [-1, 1] (m11={m11}, m20={m20}, m02={m02})")]
    NoAdmissibleRoot { m11: f64, m20: f64, m02: f64 },

    #[error("stratum '{0}' is not present in the fitted model")]
    UnknownStratum(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("bootstrap failed in {failed} of {total} replicates: {first}")]
    Bootstrap {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("evaluation failed for record {record_id}: {reason}")]
    Evaluation { record_id: u64, reason: String },

    #[error("line {line}: {reason}")]
    Parse { line: u64, reason: String },

    #[error("fold mismatch: {0}")]
    FoldMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
