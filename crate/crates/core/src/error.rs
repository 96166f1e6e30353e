use thiserror::Error;

/// Errors surfaced by data loading, fitting, selection and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("parse error at data row {row}, column `{column}`: cannot read `{value}` as a finite real")]
    Parse { row: usize, column: String, value: String },

    #[error("size error: need at least {required} observations, got {actual}")]
    TooFewObservations { required: usize, actual: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate instrument: column {0} is constant")]
    DegenerateInstrument(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("collinear design: the regressor needs at least two distinct values")]
    Collinear,

    #[error("singular kernel matrix: Cholesky failed after jitter {jitter:e} (duplicated instrument rows?)")]
    SingularKernel { jitter: f64 },

    #[error("ill-conditioned system (condition estimate {condition:e})")]
    Conditioning { condition: f64 },

    #[error("cross-validation failed: every candidate lambda was invalid")]
    Selection,

    #[error("monotone tilt infeasible: knot {knot} has best attainable slack {slack:e}")]
    Infeasible { knot: usize, slack: f64 },

    #[error("tilt solver stalled after {iterations} Newton steps (barrier {barrier:e}, decrement {decrement:e})")]
    Stalled {
        iterations: usize,
        barrier: f64,
        decrement: f64,
    },

    #[error("{failed} of {total} replications failed")]
    Replications { failed: usize, total: usize },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad input rather than numerical failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::MissingColumn(_)
                | Error::Parse { .. }
                | Error::TooFewObservations { .. }
                | Error::Dimension(_)
                | Error::NonFinite(_)
                | Error::DegenerateInstrument(_)
                | Error::InvalidParameter(_)
                | Error::Csv(_)
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
