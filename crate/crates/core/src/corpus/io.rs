use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::{validate_document, Diagnostic, Document, FeatureSchema, Mention, OrderedMapVisitor};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("line {line}: malformed document: {source}")]
    Malformed { line: usize, source: serde_json::Error },
    #[error("line {line}: unknown feature `{name}`")]
    UnknownFeature { line: usize, name: String },
    #[error("line {line}: mention {mention} is missing feature `{name}`")]
    MissingFeature { line: usize, mention: usize, name: String },
    #[error("line {line}: {diagnostic}")]
    Invalid { line: usize, diagnostic: Diagnostic },
}

#[derive(Deserialize)]
struct RawDocument {
    doc_id: String,
    tokens: Vec<String>,
    mentions: Vec<RawMention>,
}

#[derive(Deserialize)]
struct RawMention {
    start: usize,
    end: usize,
    #[serde(deserialize_with = "ordered_map")]
    features: Vec<(String, u32)>,
    #[serde(default)]
    gold_cluster: Option<u32>,
}

fn ordered_map<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<(String, u32)>, D::Error> {
    d.deserialize_map(OrderedMapVisitor::<u32>::default())
}

#[derive(Serialize)]
struct DocumentOut<'a> {
    doc_id: &'a str,
    tokens: &'a [String],
    mentions: Vec<MentionOut<'a>>,
}

#[derive(Serialize)]
struct MentionOut<'a> {
    start: usize,
    end: usize,
    features: NamedValues<'a>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gold_cluster: Option<u32>,
}

struct NamedValues<'a> {
    schema: &'a FeatureSchema,
    values: &'a [u32],
}

impl Serialize for NamedValues<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.values.len()))?;
        for (name, value) in self.schema.names().zip(self.values) {
            map.serialize_entry(name, value)?;
        }
        map.end()
    }
}

fn convert(raw: RawDocument, schema: &FeatureSchema, line: usize) -> Result<Document, CorpusError> {
    let mut mentions = Vec::with_capacity(raw.mentions.len());
    for (mi, rm) in raw.mentions.into_iter().enumerate() {
        let mut values: Vec<Option<u32>> = vec![None; schema.len()];
        for (name, value) in rm.features {
            let u = schema
                .index_of(&name)
                .ok_or(CorpusError::UnknownFeature { line, name })?;
            values[u] = Some(value);
        }
        let features = values
            .into_iter()
            .enumerate()
            .map(|(u, v)| {
                v.ok_or_else(|| CorpusError::MissingFeature {
                    line,
                    mention: mi,
                    name: schema.features()[u].name.clone(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        mentions.push(Mention::new(rm.start, rm.end, features, rm.gold_cluster));
    }
    let doc = Document {
        doc_id: raw.doc_id,
        tokens: raw.tokens,
        mentions,
    };
    validate_document(&doc, schema).map_err(|diagnostic| CorpusError::Invalid { line, diagnostic })?;
    Ok(doc)
}

/// Parse JSON-Lines, one document per non-blank line. Line numbers are 1-based.
pub fn read_corpus<R: Read>(reader: R, schema: &FeatureSchema) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: format!("line {line_no}"),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDocument =
            serde_json::from_str(&line).map_err(|source| CorpusError::Malformed { line: line_no, source })?;
        docs.push(convert(raw, schema, line_no)?);
    }
    Ok(docs)
}

pub fn write_corpus<W: Write>(mut writer: W, docs: &[Document], schema: &FeatureSchema) -> io::Result<()> {
    for doc in docs {
        let out = DocumentOut {
            doc_id: &doc.doc_id,
            tokens: &doc.tokens,
            mentions: doc
                .mentions
                .iter()
                .map(|m| MentionOut {
                    start: m.start,
                    end: m.end,
                    features: NamedValues {
                        schema,
                        values: &m.features,
                    },
                    gold_cluster: m.gold_cluster,
                })
                .collect(),
        };
        serde_json::to_writer(&mut writer, &out)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn load_corpus(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Vec<Document>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_corpus(file, schema)
}

pub fn save_corpus(docs: &[Document], schema: &FeatureSchema, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_corpus(BufWriter::new(file), docs, schema).map_err(io_err)
}
