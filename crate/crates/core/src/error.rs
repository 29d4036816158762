use thiserror::Error;

/// Every failure the library can surface.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by `{0}`")]
    NonFinite(&'static str),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("corrupt tensor file: {0}")]
    Corrupt(String),

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("autodiff: {0}")]
    Graph(String),

    #[error("training diverged in epoch {epoch}, batch {batch}: {detail}")]
    Diverged { epoch: usize, batch: usize, detail: String },

    #[error("image: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by a bad request rather than by the computation.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
