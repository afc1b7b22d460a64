use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the toolkit.
///
/// Variants are grouped into coarse classes by [`Error::class`], which the
/// command-line driver maps onto process exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("malformed record: {0}")]
    MalformedRecord(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("count mismatch: {what}: {left} vs {right}")]
    CountMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("invalid radical reference {radical} in character {character}")]
    InvalidRadical { character: usize, radical: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty statistics")]
    EmptyStats,

    #[error("empty operand: {0}")]
    EmptyOperand(&'static str),

    #[error("children statistics do not sum to the parent")]
    ChildrenMismatch,

    #[error("vocabulary mismatch: {what}: {left} vs {right}")]
    VocabularyMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("key sets differ between tyings")]
    KeySetMismatch,

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("sequence {index} too short: {frames} frames for {states} states")]
    SequenceTooShort { index: usize, frames: usize, states: usize },

    #[error("empty sequence")]
    EmptySequence,

    #[error("empty reference transcription")]
    EmptyReference,

    #[error("empty transcript set")]
    EmptyTranscripts,

    #[error("config error: {0}")]
    Config(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse error classes, one per process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Io,
    Format,
    Data,
    Infeasible,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Io => 3,
            ErrorClass::Format => 4,
            ErrorClass::Data => 5,
            ErrorClass::Infeasible => 6,
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } => ErrorClass::Io,
            Error::MalformedHeader(_) | Error::MalformedRecord(_) => ErrorClass::Format,
            Error::Config(_) | Error::InvalidArgument(_) => ErrorClass::Config,
            Error::Infeasible(_) | Error::SequenceTooShort { .. } => ErrorClass::Infeasible,
            Error::Stage { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }
}
