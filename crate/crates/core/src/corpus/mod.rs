//! Documents, event mentions and their symbolic features.
//!
//! Feature values are 1-based (`1..=N_u`) and stored in schema order.

mod generate;
mod io;

pub use generate::{corrupt_features, generate_corpus, Corrupted, GenConfig, GenError, IntRange, Split};
pub use io::{load_corpus, read_corpus, save_corpus, write_corpus, CorpusError};

use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("duplicate feature name `{0}`")]
    DuplicateName(String),
    #[error("feature `{name}` has cardinality {cardinality}, need at least 2")]
    Cardinality { name: String, cardinality: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSpec {
    pub name: String,
    pub cardinality: u32,
}

/// Ordered list of categorical features. Serialized as a JSON object whose
/// key order is significant.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeatureSchema {
    features: Vec<FeatureSpec>,
}

impl FeatureSchema {
    pub fn new<S: Into<String>>(features: impl IntoIterator<Item = (S, u32)>) -> Result<Self, SchemaError> {
        let mut out: Vec<FeatureSpec> = Vec::new();
        for (name, cardinality) in features {
            let name = name.into();
            if out.iter().any(|f| f.name == name) {
                return Err(SchemaError::DuplicateName(name));
            }
            if cardinality < 2 {
                return Err(SchemaError::Cardinality { name, cardinality });
            }
            out.push(FeatureSpec { name, cardinality });
        }
        Ok(Self { features: out })
    }

    /// The ACE 2005 inventory: Type, Polarity, Modality, Genericity, Tense.
    pub fn ace() -> Self {
        Self::new([
            ("Type", 8),
            ("Polarity", 2),
            ("Modality", 2),
            ("Genericity", 2),
            ("Tense", 4),
        ])
        .expect("static schema is valid")
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn cardinality(&self, u: usize) -> u32 {
        self.features[u].cardinality
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("schema serializes");
        hex::encode(Sha256::digest(&json))
    }
}

impl Serialize for FeatureSchema {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.features.len()))?;
        for f in &self.features {
            map.serialize_entry(&f.name, &f.cardinality)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for FeatureSchema {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let entries = deserializer.deserialize_map(OrderedMapVisitor::<u32>::default())?;
        FeatureSchema::new(entries).map_err(serde::de::Error::custom)
    }
}

/// Collects a JSON object into a `Vec` while keeping key order.
#[derive(Default)]
pub(crate) struct OrderedMapVisitor<V>(std::marker::PhantomData<V>);

impl<'de, V: Deserialize<'de>> Visitor<'de> for OrderedMapVisitor<V> {
    type Value = Vec<(String, V)>;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a JSON object")
    }

    fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
        let mut out = Vec::new();
        while let Some((k, v)) = access.next_entry::<String, V>()? {
            out.push((k, v));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    /// First trigger token, inclusive.
    pub start: usize,
    /// Last trigger token, inclusive.
    pub end: usize,
    /// One value per schema feature, each in `1..=N_u`.
    pub features: Vec<u32>,
    pub gold_cluster: Option<u32>,
}

impl Mention {
    pub fn new(start: usize, end: usize, features: Vec<u32>, gold_cluster: Option<u32>) -> Self {
        Self {
            start,
            end,
            features,
            gold_cluster,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub mentions: Vec<Mention>,
}

impl Document {
    /// Stable sort by `(start, end)`.
    pub fn sort_mentions(&mut self) {
        self.mentions.sort_by_key(|m| (m.start, m.end));
    }

    pub fn gold_clusters(&self) -> Option<Vec<u32>> {
        self.mentions.iter().map(|m| m.gold_cluster).collect()
    }
}

/// First violated document constraint.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message}")]
pub struct Diagnostic {
    pub mention: Option<usize>,
    pub message: String,
}

impl Diagnostic {
    fn at(i: usize, what: impl fmt::Display) -> Self {
        Self {
            mention: Some(i),
            message: format!("{what} at mention {i}"),
        }
    }
}

pub fn validate_document(doc: &Document, schema: &FeatureSchema) -> Result<(), Diagnostic> {
    let n = doc.tokens.len();
    let mut prev: Option<(usize, usize)> = None;
    for (i, m) in doc.mentions.iter().enumerate() {
        if m.start > m.end {
            return Err(Diagnostic::at(i, "span reversed"));
        }
        if m.end >= n {
            return Err(Diagnostic::at(
                i,
                format_args!("span out of bounds (end {} >= {n} tokens)", m.end),
            ));
        }
        if m.features.len() != schema.len() {
            return Err(Diagnostic::at(
                i,
                format_args!("feature count mismatch ({} vs {})", m.features.len(), schema.len()),
            ));
        }
        for (value, spec) in m.features.iter().zip(schema.features()) {
            if *value < 1 || *value > spec.cardinality {
                return Err(Diagnostic::at(
                    i,
                    format_args!("feature {}={value} outside 1..={}", spec.name, spec.cardinality),
                ));
            }
        }
        if let Some(p) = prev {
            if (m.start, m.end) < p {
                return Err(Diagnostic::at(i, "ordering violated"));
            }
        }
        prev = Some((m.start, m.end));
    }
    Ok(())
}
