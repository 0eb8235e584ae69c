use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit-code classes:
/// input errors (2), numerical errors (3), non-convergence (4).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{file}:{line}: {message}")]
    Ingestion {
        file: String,
        line: u64,
        message: String,
    },

    #[error("degenerate cell (area {area_id}, cohort {cohort}, survey {survey_id}): {reason}")]
    DegenerateCell {
        area_id: String,
        cohort: usize,
        survey_id: String,
        reason: String,
    },

    #[error("numerical singularity in {block}: {detail}")]
    NumericalSingularity { block: String, detail: String },

    #[error("optimizer did not converge after {iterations} iterations (|grad|_inf = {grad_norm:.3e})\n{trace}")]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        trace: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code class for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_)
            | Error::Ingestion { .. }
            | Error::Config(_)
            | Error::Io(_)
            | Error::Csv(_) => 2,
            Error::DegenerateCell { .. } | Error::NumericalSingularity { .. } => 3,
            Error::NonConvergence { .. } => 4,
        }
    }
}
