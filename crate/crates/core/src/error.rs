use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("malformed manifest record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("every category is marked unseen; nothing left to train on")]
    EmptySeenSet,

    #[error("unseen category {0:?} does not occur in the manifest")]
    UnknownUnseenCategory(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("waveform of {len} samples is shorter than one frame of {frame}")]
    TooShort { len: usize, frame: usize },

    #[error("bad shape: {0}")]
    BadShape(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("cannot aggregate an empty list")]
    EmptyList,

    #[error("length mismatch: {0} predictions vs {1} ground truths")]
    LengthMismatch(usize, usize),

    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("category {0:?} has images but no audio clips")]
    CategoryWithoutAudio(String),

    #[error("bad audio {path}: {reason}")]
    BadAudio { path: PathBuf, reason: String },

    #[error(transparent)]
    Candle(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}
