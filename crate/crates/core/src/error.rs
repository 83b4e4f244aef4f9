use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A configuration or argument value outside its documented domain.
    InvalidArgument(String),
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// A NaN or infinity appeared in an activation or gradient.
    NonFinite {
        layer: &'static str,
        timestep: Option<usize>,
    },
    TokenOutOfRange { id: u32, vocab_len: usize },
    EmptySplit(&'static str),
    TooFewRecords { n: usize, folds: usize },
    /// Malformed line in one of the plain-text formats parsed in-crate.
    Parse { line: usize, message: String },
    MissingSlot(String),
    UnknownKeyword(String),
    VocabChecksumMismatch { expected: u64, found: u64 },
    /// Unannotated comments exist but no propagation stage was configured.
    PropagationRequired { unannotated: usize },
    /// Training produced a non-finite loss or parameter.
    TrainingDiverged { epoch: usize, detail: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::ShapeMismatch { what, expected, found } => {
                write!(f, "shape mismatch for {what}: expected {expected}, found {found}")
            }
            Error::NonFinite { layer, timestep: Some(t) } => {
                write!(f, "non-finite value in {layer} at timestep {t}")
            }
            Error::NonFinite { layer, timestep: None } => write!(f, "non-finite value in {layer}"),
            Error::TokenOutOfRange { id, vocab_len } => {
                write!(f, "token id {id} out of range for vocabulary of {vocab_len}")
            }
            Error::EmptySplit(which) => write!(f, "{which} split is empty"),
            Error::TooFewRecords { n, folds } => {
                write!(f, "cannot split {n} records into {folds} folds")
            }
            Error::Parse { line, message } => write!(f, "line {line}: {message}"),
            Error::MissingSlot(t) => write!(f, "template has no <Identity> slot: {t:?}"),
            Error::UnknownKeyword(k) => write!(f, "identity keyword {k:?} is not in the configured list"),
            Error::VocabChecksumMismatch { expected, found } => write!(
                f,
                "vocabulary checksum mismatch: model expects {expected:016x}, got {found:016x}"
            ),
            Error::PropagationRequired { unannotated } => write!(
                f,
                "{unannotated} comments lack identity labels and no propagation config was given"
            ),
            Error::TrainingDiverged { epoch, detail } => write!(f, "training diverged in epoch {epoch}: {detail}"),
        }
    }
}

impl core::error::Error for Error {}
