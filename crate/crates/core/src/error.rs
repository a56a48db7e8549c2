use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid grid parameters: {0}")]
    InvalidGridParams(String),

    #[error("integration became unstable at step {step} (t = {t_s} s)")]
    Unstable { step: usize, t_s: f64 },

    #[error("degenerate game: {0}")]
    DegenerateGame(String),

    #[error("malformed payoff table {id}: {reason}")]
    MalformedTable { id: String, reason: String },

    #[error("corrupted learner state: {0}")]
    StateCorruption(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("scenario {id} failed: {source}")]
    Scenario {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
