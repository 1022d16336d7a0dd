use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver diverged at step {step} (t = {t}): non-finite state")]
    Divergence { step: usize, t: f64 },

    #[error("solver exceeded {max_steps} steps before reaching t = {t_end}")]
    NoConvergence { max_steps: usize, t_end: f64 },

    #[error("batch entry {index}: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("row {row}: {message}")]
    Load { row: usize, message: String },

    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics (solver, optimizer) as opposed to
    /// bad input or configuration.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Divergence { .. } | Error::NoConvergence { .. } | Error::NonFiniteGradient { .. } => {
                true
            }
            Error::Batch { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
