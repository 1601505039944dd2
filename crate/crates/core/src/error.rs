use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RaceError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate context: {0}")]
    Degenerate(String),

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for RaceError {
    fn from(e: std::io::Error) -> Self {
        RaceError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, RaceError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(RaceError::Domain(msg.into()))
}
