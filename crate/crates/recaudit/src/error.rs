use std::fmt;
use std::io;
use std::path::Path;

use thiserror::Error;

/// Pipeline stage an error is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Folds,
    Train,
    Evaluate,
    Grouping,
    Stats,
    Explain,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Folds => "folds",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Grouping => "grouping",
            Stage::Stats => "stats",
            Stage::Explain => "explain",
            Stage::Output => "output",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {message}")]
pub struct AuditError {
    pub stage: Stage,
    pub kind: ErrorKind,
    pub message: String,
}

impl AuditError {
    pub fn config(message: impl fmt::Display) -> Self {
        Self::new(Stage::Config, ErrorKind::Config, message)
    }

    pub fn data(stage: Stage, message: impl fmt::Display) -> Self {
        Self::new(stage, ErrorKind::Data, message)
    }

    pub fn numerical(stage: Stage, message: impl fmt::Display) -> Self {
        Self::new(stage, ErrorKind::Numerical, message)
    }

    pub fn io(stage: Stage, path: &Path, err: io::Error) -> Self {
        Self::data(stage, format!("{}: {err}", path.display()))
    }

    fn new(stage: Stage, kind: ErrorKind, message: impl fmt::Display) -> Self {
        Self {
            stage,
            kind,
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numerical => 4,
        }
    }
}

pub type Result<T, E = AuditError> = std::result::Result<T, E>;
