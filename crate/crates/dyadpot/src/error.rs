use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
