use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("insufficient points: need {needed}, have {available}")]
    InsufficientPoints { needed: usize, available: usize },

    #[error("depth image has no valid foreground pixel")]
    NoForeground,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("no valid result: {0}")]
    EmptyResult(String),

    #[error("input error: {0}")]
    InputError(String),

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ::image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
