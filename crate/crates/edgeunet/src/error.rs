use std::path::PathBuf;

use edgeunet_core::Error as CoreError;

use crate::pnm::PnmError;
use crate::uew::UewError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] edgeunet_core::Error),
    #[error(transparent)]
    Uew(#[from] UewError),
    #[error(transparent)]
    Pnm(#[from] PnmError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Usage(String),
    #[error("{}: {msg}", path.display())]
    Data { path: PathBuf, msg: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Attaches a file path to format errors.
    pub fn at(self, path: impl Into<PathBuf>) -> Self {
        match self {
            Error::Uew(e) => Error::Data { path: path.into(), msg: e.to_string() },
            Error::Pnm(e) => Error::Data { path: path.into(), msg: e.to_string() },
            other => other,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Core(e) if e.is_numeric() => "numeric",
            Error::Core(CoreError::Spec(_) | CoreError::UnknownPreset(_)) => "spec",
            Error::Core(CoreError::InvalidArgument(_)) => "argument",
            Error::Core(_) => "model",
            Error::Uew(_) => "format",
            Error::Pnm(_) => "format",
            Error::Data { .. } => "format",
            Error::Io { .. } => "io",
            Error::Json { .. } => "format",
            Error::Usage(_) => "usage",
        }
    }

    /// 2 usage, 3 data/format/io, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "usage" => 2,
            "numeric" => 4,
            _ => 3,
        }
    }
}
