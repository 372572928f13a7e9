use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite response")]
    NonFiniteResponse,
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("grid too narrow: half-width {0} must exceed 2")]
    GridTooNarrow(f64),
    #[error("invalid Monte Carlo parameters: {0}")]
    InvalidMonteCarlo(String),
    #[error("quantile out of table range: {alpha} not in [{min}, {max}]")]
    QuantileOutOfRange { alpha: f64, min: f64, max: f64 },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate polynomial design")]
    DegeneratePolynomialDesign,
    #[error("nonpositive variance")]
    NonpositiveVariance,
    #[error("bandwidth too small: {0} points with positive kernel weight")]
    BandwidthTooSmall(usize),
    #[error("degenerate local design")]
    DegenerateLocalDesign,

    #[error("degenerate sampling interval")]
    DegenerateSamplingInterval,
    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("design point out of domain: {0}")]
    OutOfDomain(f64),
    #[error("target {theta0} outside the range of the response function")]
    TargetOutOfRange { theta0: f64 },
    #[error("replay exhausted at x = {0}")]
    ReplayExhausted(f64),
    #[error("unrecorded design point x = {0}")]
    UnrecordedPoint(f64),

    #[error("invalid study config: {0}")]
    InvalidStudy(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    /// True for errors caused by bad user-supplied input rather than a
    /// failure inside the estimation itself.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::EmptyInput
                | Error::NonFiniteResponse
                | Error::InvalidData(_)
                | Error::GridTooNarrow(_)
                | Error::InvalidMonteCarlo(_)
                | Error::QuantileOutOfRange { .. }
                | Error::InvalidParameter { .. }
                | Error::InvalidDesign(_)
                | Error::OutOfDomain(_)
                | Error::TargetOutOfRange { .. }
                | Error::InvalidStudy(_)
                | Error::Io { .. }
                | Error::Parse(_)
        )
    }
}
