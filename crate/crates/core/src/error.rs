use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid value: {0}")]
    Value(String),

    #[error("dialogue {dialogue}: word {index} has no punctuation label")]
    MissingLabel { dialogue: String, index: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("batch has no unmasked positions")]
    DegenerateBatch,

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("alignment needs {cells} cells, budget is {budget}")]
    AlignmentTooLarge { cells: u128, budget: u128 },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// Attaches a path to an I/O error.
    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Divergence { .. })
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic {0:?}, expected \"PNCT\"")]
    BadMagic([u8; 4]),

    #[error("checkpoint version {found}, this build reads version {expected}")]
    VersionSkew { found: u32, expected: u32 },

    #[error("tensor {name}: {message}")]
    ShapeMismatch { name: String, message: String },

    #[error("checkpoint is truncated")]
    Truncated,

    #[error("bad config block: {0}")]
    Config(String),

    #[error("{0} unexpected bytes after the last tensor")]
    TrailingBytes(usize),
}
