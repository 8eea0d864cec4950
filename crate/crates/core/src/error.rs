use thiserror::Error;

/// Errors raised by the stabilization pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("integration diverged: non-finite state after {step} substeps")]
    IntegrationDiverged { step: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("invalid radii: {0}")]
    InvalidRadii(String),

    #[error("envelope order violated at s = {at}: q1 = {q1}, q2 = {q2}")]
    EnvelopeOrderViolation { at: f64, q1: f64, q2: f64 },

    #[error("sampling period {delta} exceeds certified bound {bound}")]
    SamplingTooCoarse { delta: f64, bound: f64 },

    #[error("critic weights outside the admissible set: {0}")]
    WeightOutOfSet(String),

    #[error("no control on the grid achieves the sample-and-hold decay at |x| = {norm}")]
    DecayInfeasible { norm: f64 },

    #[error("quasi-infinite-horizon cost undefined: target ball never reached within the horizon")]
    CostUndefined,

    #[error("cost ratio undefined: {0}")]
    RatioUndefined(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
