use thiserror::Error;

/// Errors raised across the crate. Each variant maps onto one CLI exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("unsupported jump measure: {0}")]
    UnsupportedMeasure(String),
    #[error("measure integrability: {0}")]
    Integrability(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("interval undefined: {0}")]
    IntervalUndefined(String),
    #[error("no solution: {0}")]
    NoSolution(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("horizon too short: {0}")]
    HorizonTooShort(String),
    #[error("load error at row {row}: {msg}")]
    Load { row: usize, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// 2 config/input error, 3 mathematical infeasibility, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_)
            | Error::Load { .. }
            | Error::Config(_)
            | Error::Precondition(_)
            | Error::UnsupportedMeasure(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => 2,
            Error::Infeasible(_) | Error::IntervalUndefined(_) | Error::NoSolution(_) => 3,
            Error::Integrability(_) | Error::HorizonTooShort(_) => 4,
        }
    }
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Parameter(msg()))
    }
}
