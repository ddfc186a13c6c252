use thiserror::Error;

use crate::math::MathError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Math(#[from] MathError),
    #[error("mention {mention}: span {start}..={end} outside {len} encoded tokens")]
    SpanOutOfBounds {
        mention: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("feature {feature}: value {value} outside 1..={cardinality}")]
    FeatureOutOfRange {
        feature: usize,
        value: u32,
        cardinality: u32,
    },
    #[error("feature index {index} out of range for {count} features")]
    FeatureIndex { index: usize, count: usize },
    #[error("expected {expected} feature slots, got {got}")]
    SlotCount { expected: usize, got: usize },
    #[error("mention {0} has no gold cluster")]
    MissingGold(usize),
    #[error("schema mismatch: model expects {expected}, corpus has {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;
