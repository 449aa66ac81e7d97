use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::Space;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate space mismatch: {left} vs {right}")]
    SpaceMismatch { left: Space, right: Space },

    #[error("{what} = {value} is outside [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unknown category name {0:?}")]
    UnknownCategory(String),

    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn range(what: &'static str, value: f64, lo: f64, hi: f64) -> Self {
        Error::OutOfRange {
            what,
            value,
            lo,
            hi,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Fails unless `value` lies in the closed interval `[lo, hi]` (NaN fails).
pub(crate) fn check_range(what: &'static str, value: f64, lo: f64, hi: f64) -> Result<()> {
    if value >= lo && value <= hi {
        Ok(())
    } else {
        Err(Error::range(what, value, lo, hi))
    }
}
