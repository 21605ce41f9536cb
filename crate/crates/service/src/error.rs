use thiserror::Error;

pub type Result<T> = std::result::Result<T, ServiceError>;

/// Startup failures: configuration, manifest and dataset loading.
#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error(transparent)]
    Core(#[from] explore_core::Error),
}
