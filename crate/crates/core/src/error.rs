use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("grid {height}x{width} is not divisible by pyramid scale {scale}")]
    Divisibility {
        height: usize,
        width: usize,
        scale: usize,
    },

    #[error("grid {height}x{width} is smaller than the minimum of {min} cells per side")]
    TooSmall {
        height: usize,
        width: usize,
        min: usize,
    },

    #[error("loss expects a scalar node, got shape {0:?}")]
    NonScalarLoss((usize, usize, usize)),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Failures reading or writing the `DYNC` binary container.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic {0:?}, expected \"DYNC\"")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("file truncated while reading {0}")]
    Truncated(&'static str),

    #[error("unexpected section tag {0:?}")]
    BadSection([u8; 4]),

    #[error("corrupt field {field}: {reason}")]
    Corrupt {
        field: &'static str,
        reason: String,
    },

    #[error(transparent)]
    Io(std::io::Error),
}
