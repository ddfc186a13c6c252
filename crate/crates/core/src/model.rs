//! Full scoring model and its JSON persistence.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, FeatureSchema};
use crate::encoder::{
    embed_features, encode_tokens, trigger_repr, EncoderParams, FeatureEmbedders, InitRng, Vocabulary,
};
use crate::error::{ModelError, Result};
use crate::math::{DenseMatrix, NodeId, ParamStore, RateGroup, Tape};
use crate::pair::{Mode, PairModel, PairScoreMatrix};

pub const MODEL_FORMAT: &str = "evcoref-model/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dimensions {
    /// Token and trigger width `d`.
    pub token_dim: usize,
    /// Feature embedding width `l`.
    pub feature_dim: usize,
    /// Pair representation width `p`.
    pub pair_dim: usize,
    /// Encoder context half-width `w`.
    pub window: usize,
}

impl Default for Dimensions {
    fn default() -> Self {
        Self {
            token_dim: 64,
            feature_dim: 16,
            pair_dim: 32,
            window: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    Random,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: Mode,
    pub dims: Dimensions,
    pub init: Init,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub schema: FeatureSchema,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub embedders: Option<FeatureEmbedders>,
    pub pair: PairModel,
    /// Hash of the run configuration that produced this model.
    pub config_hash: Option<String>,
}

impl Model {
    pub fn new(config: ModelConfig, schema: FeatureSchema, vocab: Vocabulary) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut rng_ref: Option<&mut InitRng> = match config.init {
            Init::Random => Some(&mut rng),
            Init::Zero => None,
        };
        let dims = config.dims;
        let mut store = ParamStore::new();
        let encoder = EncoderParams::register(
            &mut store,
            vocab.len(),
            dims.token_dim,
            dims.window,
            rng_ref.as_deref_mut(),
        );
        let embedders = config
            .mode
            .uses_features()
            .then(|| FeatureEmbedders::register(&mut store, &schema, dims.feature_dim, rng_ref.as_deref_mut()));
        let names: Vec<&str> = schema.names().collect();
        let pair = PairModel::register(
            &mut store,
            config.mode,
            &names,
            dims.token_dim,
            dims.feature_dim,
            dims.pair_dim,
            rng_ref,
        );
        Self {
            config,
            schema,
            vocab,
            store,
            encoder,
            embedders,
            pair,
            config_hash: None,
        }
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<()> {
        if schema != &self.schema {
            return Err(ModelError::SchemaMismatch {
                expected: self.schema.hash(),
                found: schema.hash(),
            });
        }
        Ok(())
    }

    /// Records the full pipeline for `doc` on `tape` and returns the score
    /// nodes of all pairs `j < i`, in `PairScoreMatrix` order.
    pub fn forward(&self, tape: &mut Tape, doc: &Document) -> Result<Vec<NodeId>> {
        let k = doc.mentions.len();
        if k < 2 {
            return Ok(Vec::new());
        }
        let encoded = encode_tokens(tape, doc, &self.vocab, &self.encoder)?;
        let triggers = doc
            .mentions
            .iter()
            .enumerate()
            .map(|(i, m)| trigger_repr(tape, &encoded, m, i))
            .collect::<Result<Vec<_>>>()?;
        let embedded = match &self.embedders {
            Some(emb) => doc
                .mentions
                .iter()
                .map(|m| embed_features(tape, m, emb))
                .collect::<Result<Vec<_>>>()?,
            None => vec![Vec::new(); k],
        };

        // feature pairs depend only on the two values, so share them per document
        let mut feature_pairs: HashMap<(usize, u32, u32), NodeId> = HashMap::new();
        let mut scores = Vec::with_capacity(k * (k - 1) / 2);
        let mut slots = Vec::with_capacity(self.pair.feature_count());
        for i in 1..k {
            for j in 0..i {
                let tij = self.pair.trigger_pair(tape, triggers[i], triggers[j])?;
                slots.clear();
                for (u, (&ei, &ej)) in embedded[i].iter().zip(&embedded[j]).enumerate() {
                    let key = (u, doc.mentions[i].features[u], doc.mentions[j].features[u]);
                    let hij = match feature_pairs.get(&key) {
                        Some(&n) => n,
                        None => {
                            let n = self.pair.feature_pair(tape, ei, ej, u)?;
                            feature_pairs.insert(key, n);
                            n
                        }
                    };
                    slots.push(match self.mode() {
                        Mode::Cdgm => self.pair.cdgm(tape, tij, hij, u)?.output,
                        _ => hij,
                    });
                }
                let fij = self.pair.assemble_pair(tape, tij, &slots)?;
                scores.push(self.pair.score_pair(tape, fij)?);
            }
        }
        Ok(scores)
    }

    pub fn score_document(&self, doc: &Document) -> Result<PairScoreMatrix> {
        let mut tape = Tape::inference(&self.store);
        let nodes = self.forward(&mut tape, doc)?;
        let mut scores = PairScoreMatrix::zeros(doc.mentions.len());
        let mut it = nodes.iter();
        for i in 1..doc.mentions.len() {
            for j in 0..i {
                scores.set(i, j, tape.scalar(*it.next().expect("one node per pair")));
            }
        }
        Ok(scores)
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            mode: self.config.mode,
            dims: self.config.dims,
            init: self.config.init,
            seed: self.config.seed,
            schema_hash: self.schema.hash(),
            schema: self.schema.clone(),
            config_hash: self.config_hash.clone(),
            vocab: self.vocab.tokens().to_vec(),
            params: self
                .store
                .iter()
                .map(|(_, p)| ParamRecord {
                    name: p.name.clone(),
                    group: p.group,
                    rows: p.value.rows(),
                    cols: p.value.cols(),
                    values: p.value.values().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT {
            return Err(ModelError::Format(format!("unsupported format `{}`", file.format)));
        }
        if file.schema.hash() != file.schema_hash {
            return Err(ModelError::Format("schema hash does not match schema".into()));
        }
        let config = ModelConfig {
            mode: file.mode,
            dims: file.dims,
            init: Init::Zero,
            seed: file.seed,
        };
        let mut model = Model::new(config, file.schema, Vocabulary::from_tokens(file.vocab));
        model.config.init = file.init;
        model.config_hash = file.config_hash;
        if model.store.len() != file.params.len() {
            return Err(ModelError::Format(format!(
                "expected {} parameter blocks, found {}",
                model.store.len(),
                file.params.len()
            )));
        }
        for ((_, param), record) in model.store.iter_mut().zip(file.params) {
            if param.name != record.name || param.group != record.group {
                return Err(ModelError::Format(format!(
                    "expected block `{}`, found `{}`",
                    param.name, record.name
                )));
            }
            if (param.value.rows(), param.value.cols()) != (record.rows, record.cols) {
                return Err(ModelError::Format(format!(
                    "block `{}` should be {}, found [{}x{}]",
                    record.name,
                    param.value.shape(),
                    record.rows,
                    record.cols
                )));
            }
            param.value = DenseMatrix::new(record.rows, record.cols, record.values)?;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    mode: Mode,
    dims: Dimensions,
    init: Init,
    seed: u64,
    schema: FeatureSchema,
    schema_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    vocab: Vec<String>,
    params: Vec<ParamRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamRecord {
    name: String,
    group: RateGroup,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}
