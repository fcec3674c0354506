use thiserror::Error;

/// Crate-wide error type. Variants map to the failure classes surfaced by the
/// public API: parse problems split into format/length/consistency so callers
/// can tell a corrupt file from a truncated one.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// Wrong magic, unknown tag, or malformed header.
    #[error("format: {0}")]
    Format(String),

    /// Payload shorter than the header promises.
    #[error("length: {0}")]
    Length(String),

    /// Two values that must agree do not (image/label counts, shape chains).
    #[error("consistency: {0}")]
    Consistency(String),

    /// Argument outside its valid range.
    #[error("domain: {0}")]
    Domain(String),

    /// Matrix or vector dimensions that do not line up.
    #[error("shape: {0}")]
    Shape(String),

    /// Operation invalid in the current state (e.g. resuming with a mismatched checkpoint).
    #[error("state: {0}")]
    State(String),
}

pub type Result<T> = std::result::Result<T, Error>;
