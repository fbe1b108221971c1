use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid hypergraph: {0}")]
    InvalidHypergraph(String),

    #[error("labels required")]
    LabelsRequired,

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("count mismatch in {}: {msg}", path.display())]
    CountMismatch { path: PathBuf, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("infeasible synthetic spec: {0}")]
    Infeasible(String),

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing parameter `{0}` in checkpoint")]
    MissingParameter(String),

    #[error("non-finite {what} at epoch {epoch}")]
    Divergence { epoch: usize, what: String },

    #[error("{0}")]
    Precondition(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
