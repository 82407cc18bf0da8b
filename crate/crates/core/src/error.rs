use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no lung candidate survived the threshold sweep")]
    NoLungFound,

    #[error("lung mask has no foreground pixels")]
    EmptyLungMask,

    #[error("feature vector has zero norm")]
    ZeroVector,

    #[error("feature vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("score set contains only one class")]
    SingleClass,

    #[error("score set contains no positive samples")]
    NoPositives,

    #[error("directory not found: {}", .0.display())]
    DirNotFound(PathBuf),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("config parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown config key `{key}` at line {line}")]
    UnknownKey { key: String, line: usize },

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
