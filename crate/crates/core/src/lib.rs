//! Within-document event coreference with gated fusion of symbolic features.

pub mod corpus;
pub mod digest;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod hungarian;
pub mod inference;
pub mod math;
pub mod metrics;
pub mod model;
pub mod pair;
pub mod seed;
pub mod training;

pub use error::{ModelError, Result};
