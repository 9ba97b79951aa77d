use std::io;
use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] floodvqa_core::Error),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("{}: malformed JSON: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },

    #[error("question {question_id}: {message}")]
    Annotation { question_id: String, message: String },

    #[error("feature store {}: {message}", path.display())]
    Store { path: PathBuf, message: String },

    #[error(
        "feature store {}: checksum mismatch (manifest {expected}, payload {actual}); delete the directory and re-run extraction",
        path.display()
    )]
    Corrupt { path: PathBuf, expected: String, actual: String },

    #[error("item {item_id:?} not found in feature store {}", store.display())]
    MissingFeature { store: PathBuf, item_id: String },

    #[error("encoder {name}: {message}")]
    Encoder { name: String, message: String },

    #[error(transparent)]
    Candle(#[from] candle_core::Error),

    #[error("image {}: {message}", path.display())]
    Image { path: PathBuf, message: String },

    #[error("checkpoint {}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },

    #[error("{0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<Path>) -> impl FnOnce(io::Error) -> Error {
        let path = path.as_ref().to_path_buf();
        move |source| Error::Io { path, source }
    }

    pub(crate) fn json(path: impl AsRef<Path>) -> impl FnOnce(serde_json::Error) -> Error {
        let path = path.as_ref().to_path_buf();
        move |source| Error::Json { path, source }
    }

    pub(crate) fn encoder(name: &str, message: impl std::fmt::Display) -> Error {
        Error::Encoder {
            name: name.to_string(),
            message: message.to_string(),
        }
    }
}
