use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors of the IO layer. Every variant maps onto one of the CLI exit codes
/// (2 input, 3 numerical failure, 4 compatibility).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A malformed data row. `row` counts records from 1, header excluded.
    #[error("{}: row {row}, field {field:?}: {message}", path.display())]
    Row { path: PathBuf, row: usize, field: String, message: String },
    #[error("{}: line {line}: {message}", path.display())]
    Line { path: PathBuf, line: usize, message: String },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    /// File written by an unsupported format version or for another vocabulary.
    #[error("{0}")]
    Incompatible(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] toxbias_core::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Error {
        Error::Format { path: path.into(), message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        use toxbias_core::Error as E;
        match self {
            Error::Core(E::NonFinite { .. } | E::TrainingDiverged { .. }) => 3,
            Error::Core(E::VocabChecksumMismatch { .. }) | Error::Incompatible(_) => 4,
            _ => 2,
        }
    }
}
