use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("field contains non-finite values ({context})")]
    InvalidField { context: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration rejected:\n{}", .0.join("\n"))]
    Validation(Vec<String>),

    #[error("solver blow-up at t = {t}: {detail}")]
    BlowUp { t: f64, detail: String },

    #[error("fixed-point iteration diverged after {iterations} iterations (last ratios {ratios:?})")]
    Diverged { iterations: usize, ratios: Vec<f64> },

    #[error("fixed-point iteration did not reach tolerance {tol:e} in {iterations} iterations")]
    NotConverged { iterations: usize, tol: f64 },

    #[error("small-data check failed: contraction estimate {estimate:.4} >= 1/2")]
    NotSmallData { estimate: f64 },

    #[error("no reliable samples: {0}")]
    NoReliableSamples(String),

    #[error("malformed field file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors raised by the numerics rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::BlowUp { .. }
                | Error::Diverged { .. }
                | Error::NotConverged { .. }
                | Error::NotSmallData { .. }
                | Error::InvalidField { .. }
                | Error::NoReliableSamples(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
