use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("divergence at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },

    #[error("bad magic bytes: not an LRRW container")]
    BadMagic,

    #[error("unsupported container version {0}")]
    BadVersion(u8),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("truncated payload: need {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("image format error: {0}")]
    ImageFormat(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("non-finite gradient for parameter '{0}'")]
    NonFiniteGrad(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
