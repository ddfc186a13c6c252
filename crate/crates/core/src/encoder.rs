//! Token encoder, trigger averaging and symbolic-feature embedding.
//!
//! The encoder is a small stand-in for a pretrained contextual model: each
//! token embedding is concatenated with the mean embedding of its window and
//! passed through one affine map and a ReLU.

use std::collections::HashMap;

use rand::Rng;

/// Generator used for parameter initialization.
pub type InitRng = rand_chacha::ChaCha8Rng;

use crate::corpus::{Document, FeatureSchema, Mention};
use crate::error::{ModelError, Result};
use crate::math::{DenseMatrix, NodeId, ParamId, ParamStore, RateGroup, Tape};

pub const UNKNOWN_TOKEN: &str = "<unk>";

/// Token-to-id map. Id 0 is reserved for unknown tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Sorted unique tokens of `docs`, after the unknown token.
    pub fn from_documents<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Self {
        let mut tokens: Vec<String> = docs.into_iter().flat_map(|d| d.tokens.iter().cloned()).collect();
        tokens.sort_unstable();
        tokens.dedup();
        tokens.retain(|t| t != UNKNOWN_TOKEN);
        Self::from_tokens(std::iter::once(UNKNOWN_TOKEN.to_string()).chain(tokens).collect())
    }

    /// `tokens[0]` is taken to be the unknown token.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderParams {
    pub embeddings: ParamId,
    pub mix_weight: ParamId,
    pub mix_bias: ParamId,
    pub dim: usize,
    pub window: usize,
}

/// Uniform in `[-bound, bound]`, or all zeros when `rng` is `None`.
pub(crate) fn init_matrix(rng: Option<&mut InitRng>, rows: usize, cols: usize, bound: f64) -> DenseMatrix {
    match rng {
        Some(rng) => {
            let values = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
            DenseMatrix::new(rows, cols, values).expect("sized")
        }
        None => DenseMatrix::zeros(rows, cols),
    }
}

impl EncoderParams {
    pub fn register(
        store: &mut ParamStore,
        vocab_size: usize,
        dim: usize,
        window: usize,
        mut rng: Option<&mut InitRng>,
    ) -> Self {
        let emb_bound = 1.0 / (dim as f64).sqrt();
        let embeddings = store.add(
            "encoder.embeddings",
            RateGroup::Lower,
            init_matrix(rng.as_deref_mut(), vocab_size, dim, emb_bound),
        );
        let mix_bound = 1.0 / ((2 * dim) as f64).sqrt();
        let mix_weight = store.add(
            "encoder.mix.weight",
            RateGroup::Lower,
            init_matrix(rng, dim, 2 * dim, mix_bound),
        );
        let mix_bias = store.add("encoder.mix.bias", RateGroup::Lower, DenseMatrix::zeros(dim, 1));
        Self {
            embeddings,
            mix_weight,
            mix_bias,
            dim,
            window,
        }
    }
}

/// `x_i = ReLU(A [e_i ; mean(e_{i-w..=i+w})] + b)` for every token.
pub fn encode_tokens(
    tape: &mut Tape,
    doc: &Document,
    vocab: &Vocabulary,
    params: &EncoderParams,
) -> Result<Vec<NodeId>> {
    let embedded = doc
        .tokens
        .iter()
        .map(|t| tape.row(params.embeddings, vocab.id(t)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let n = embedded.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(params.window);
        let hi = (i + params.window).min(n - 1);
        let context = tape.mean(&embedded[lo..=hi])?;
        let joined = tape.concat(&[embedded[i], context]);
        let mixed = tape.affine(params.mix_weight, params.mix_bias, joined)?;
        out.push(tape.relu(mixed));
    }
    Ok(out)
}

/// Mean of the encoded tokens covered by the mention's trigger span.
pub fn trigger_repr(tape: &mut Tape, encoded: &[NodeId], mention: &Mention, index: usize) -> Result<NodeId> {
    if mention.start > mention.end || mention.end >= encoded.len() {
        return Err(ModelError::SpanOutOfBounds {
            mention: index,
            start: mention.start,
            end: mention.end,
            len: encoded.len(),
        });
    }
    Ok(tape.mean(&encoded[mention.start..=mention.end])?)
}

/// One `N_u x l` table per schema feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEmbedders {
    pub tables: Vec<ParamId>,
    pub cardinalities: Vec<u32>,
    pub width: usize,
}

impl FeatureEmbedders {
    pub fn register(
        store: &mut ParamStore,
        schema: &FeatureSchema,
        width: usize,
        mut rng: Option<&mut InitRng>,
    ) -> Self {
        let bound = 1.0 / (width as f64).sqrt();
        let tables = schema
            .features()
            .iter()
            .map(|f| {
                store.add(
                    format!("features.{}.embeddings", f.name),
                    RateGroup::Lower,
                    init_matrix(rng.as_deref_mut(), f.cardinality as usize, width, bound),
                )
            })
            .collect();
        Self {
            tables,
            cardinalities: schema.features().iter().map(|f| f.cardinality).collect(),
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }
}

/// Look up row `c_i^(u)` of each feature table.
pub fn embed_features(tape: &mut Tape, mention: &Mention, embedders: &FeatureEmbedders) -> Result<Vec<NodeId>> {
    if mention.features.len() != embedders.len() {
        return Err(ModelError::SlotCount {
            expected: embedders.len(),
            got: mention.features.len(),
        });
    }
    mention
        .features
        .iter()
        .enumerate()
        .map(|(u, &value)| {
            let cardinality = embedders.cardinalities[u];
            if value < 1 || value > cardinality {
                return Err(ModelError::FeatureOutOfRange {
                    feature: u,
                    value,
                    cardinality,
                });
            }
            Ok(tape.row(embedders.tables[u], value as usize - 1)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn doc(tokens: &[&str]) -> Document {
        Document {
            doc_id: "d".into(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            mentions: vec![],
        }
    }

    fn setup(window: usize, seed: u64) -> (ParamStore, EncoderParams, Vocabulary) {
        let d = doc(&["a", "b", "c", "d", "e", "f", "g"]);
        let vocab = Vocabulary::from_documents([&d]);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = EncoderParams::register(&mut store, vocab.len(), 4, window, Some(&mut rng));
        (store, enc, vocab)
    }

    #[test]
    fn vocabulary_reserves_unknown() {
        let v = Vocabulary::from_documents([&doc(&["b", "a", "b"])]);
        assert_eq!(v.tokens(), ["<unk>", "a", "b"]);
        assert_eq!(v.id("zzz"), 0);
        assert_eq!(v.id("b"), 2);
    }

    #[test]
    fn empty_document_encodes_to_nothing() {
        let (store, enc, vocab) = setup(2, 1);
        let mut tape = Tape::new(&store);
        assert!(encode_tokens(&mut tape, &doc(&[]), &vocab, &enc).unwrap().is_empty());
    }

    #[test]
    fn identical_tokens_encode_identically() {
        let (store, enc, vocab) = setup(2, 3);
        let mut tape = Tape::new(&store);
        let x = encode_tokens(&mut tape, &doc(&["c"; 6]), &vocab, &enc).unwrap();
        for n in &x[1..] {
            for (a, b) in tape.value(*n).iter().zip(tape.value(x[0])) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_window_context_is_self() {
        let (store, enc, vocab) = setup(0, 4);
        let mut tape = Tape::new(&store);
        let d = doc(&["a", "b", "c"]);
        let x = encode_tokens(&mut tape, &d, &vocab, &enc).unwrap();
        let e = store.get(enc.embeddings).value.row(vocab.id("b")).unwrap().to_vec();
        let joined: Vec<f64> = e.iter().chain(&e).copied().collect();
        let expect = store
            .get(enc.mix_weight)
            .value
            .affine(&joined.into(), &crate::math::DenseVector::zeros(4))
            .unwrap()
            .relu();
        assert_eq!(tape.value(x[1]), expect.as_slice());
    }

    #[test]
    fn encoding_is_local_to_window() {
        let (store, enc, vocab) = setup(1, 5);
        let a = doc(&["a", "b", "c", "d", "e", "f", "g"]);
        let mut b = a.clone();
        b.tokens[6] = "a".into();
        let mut tape = Tape::new(&store);
        let xa = encode_tokens(&mut tape, &a, &vocab, &enc).unwrap();
        let xb = encode_tokens(&mut tape, &b, &vocab, &enc).unwrap();
        for i in 0..5 {
            assert_eq!(tape.value(xa[i]), tape.value(xb[i]), "token {i}");
        }
        assert_ne!(tape.value(xa[5]), tape.value(xb[5]));
    }

    #[test]
    fn trigger_average() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = vec![tape.constant(vec![1.0, 2.0]), tape.constant(vec![3.0, 4.0])];
        let m = Mention::new(0, 1, vec![], None);
        let t = trigger_repr(&mut tape, &x, &m, 0).unwrap();
        assert_eq!(tape.value(t), &[2.0, 3.0]);
        let single = trigger_repr(&mut tape, &x, &Mention::new(1, 1, vec![], None), 0).unwrap();
        assert_eq!(tape.value(single), &[3.0, 4.0]);
        assert!(trigger_repr(&mut tape, &x, &Mention::new(1, 2, vec![], None), 3).is_err());
    }

    #[test]
    fn feature_lookup() {
        let schema = FeatureSchema::new([("Tense", 4), ("Polarity", 2)]).unwrap();
        let mut store = ParamStore::new();
        let emb = FeatureEmbedders::register(&mut store, &schema, 4, None);
        store.get_mut(emb.tables[0]).value.values_mut()[2 * 4 + 2] = 1.0;
        let mut tape = Tape::new(&store);
        let h = embed_features(&mut tape, &Mention::new(0, 0, vec![3, 1], None), &emb).unwrap();
        assert_eq!(tape.value(h[0]), &[0.0, 0.0, 1.0, 0.0]);
        assert!(matches!(
            embed_features(&mut tape, &Mention::new(0, 0, vec![5, 1], None), &emb),
            Err(ModelError::FeatureOutOfRange { feature: 0, .. })
        ));
    }

    #[test]
    fn empty_schema_embeds_nothing() {
        let mut store = ParamStore::new();
        let emb = FeatureEmbedders::register(&mut store, &FeatureSchema::empty(), 4, None);
        let mut tape = Tape::new(&store);
        assert!(embed_features(&mut tape, &Mention::new(0, 0, vec![], None), &emb)
            .unwrap()
            .is_empty());
    }
}
