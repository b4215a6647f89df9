use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("position texture has no valid texels")]
    EmptyTexture,
    #[error("no ground plane: every RANSAC sample was degenerate")]
    NoPlane,
    #[error("no positive scale: every joint ray is parallel to or points away from the ground plane")]
    NoScale,
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("non-finite gradient in parameter group `{group}` ({count} entries, first at index {first})")]
    NonFiniteGradient {
        group: &'static str,
        count: usize,
        first: usize,
    },
    #[error("malformed {kind} file: {detail}")]
    Format { kind: &'static str, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn format(kind: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            kind,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
