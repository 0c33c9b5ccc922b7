use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("environment terminated before the first step")]
    EmptyTrajectory,
    #[error("environment cannot be set to the requested state: {0}")]
    UnsupportedState(String),
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("non-finite loss in term `{term}`")]
    NonFinite { term: &'static str },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
    #[error("teacher failed on visited state {state}: {message}")]
    TeacherFailure { state: String, message: String },
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
