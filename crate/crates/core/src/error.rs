use std::path::PathBuf;

use thiserror::Error;

use crate::gridmap::Cell;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("cell ({}, {}) is outside the {nrows}x{ncols} grid", .cell.row, .cell.col)]
    OutOfBounds { cell: Cell, nrows: usize, ncols: usize },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("user cell ({}, {}) lies inside a building", .0.row, .0.col)]
    InvalidUser(Cell),

    #[error("environment unusable: {0}")]
    EnvironmentUnusable(String),

    #[error("illegal action {action} at cell ({}, {})", .cell.row, .cell.col)]
    IllegalAction { action: String, cell: Cell },

    #[error("episode already finished")]
    EpisodeDone,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("replay buffer holds {len} transitions, {requested} requested")]
    NotReady { len: usize, requested: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(path: &std::path::Path, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }
}
