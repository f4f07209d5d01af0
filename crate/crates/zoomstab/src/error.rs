//! Error types shared across the crate.

use thiserror::Error;

/// Configuration or parameter-domain failure. Each variant carries enough
/// context to point the user at the offending field.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid system parameters: {0}")]
    System(String),

    #[error("invalid quantizer policy: {0}")]
    Quantizer(String),

    #[error("invalid channel: {0}")]
    Channel(String),

    #[error("invalid codebook: {0}")]
    Codebook(String),

    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("config validation failed:\n{}", .0.join("\n"))]
    Violations(Vec<String>),
}

pub type Result<T> = std::result::Result<T, ConfigError>;
