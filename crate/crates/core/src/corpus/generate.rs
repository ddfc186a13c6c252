//! Seeded synthetic corpora with planted coreference structure.
//!
//! Every document is split into latent events. Mentions of one event share
//! its trigger token and its true feature values. Each event after the first
//! reuses the trigger of a random earlier event with probability
//! `trigger_ambiguity`; events sharing a trigger differ in their features, so
//! only the features tell them apart. Context tokens are drawn from the rest
//! of the vocabulary and carry no event information.

use std::collections::{BTreeMap, HashSet};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Document, FeatureSchema, Mention};
use crate::seed::derive_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("range `{name}` is empty ({min} > {max})")]
    EmptyRange { name: &'static str, min: usize, max: usize },
    #[error("`{name}` = {value} is not a probability")]
    Probability { name: String, value: f64 },
    #[error("infeasible config: {0}")]
    Infeasible(String),
    #[error("no accuracy given for feature `{0}`")]
    MissingAccuracy(String),
}

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange {
    pub min: usize,
    pub max: usize,
}

impl IntRange {
    pub const fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }

    fn check(&self, name: &'static str) -> Result<(), GenError> {
        if self.min > self.max {
            return Err(GenError::EmptyRange {
                name,
                min: self.min,
                max: self.max,
            });
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        rng.gen_range(self.min..=self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Dev => 2,
            Split::Test => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub documents: usize,
    pub tokens_per_doc: IntRange,
    pub mentions_per_doc: IntRange,
    pub clusters_per_doc: IntRange,
    pub vocab_size: usize,
    /// Probability that an event reuses the trigger of an earlier event.
    pub trigger_ambiguity: f64,
    /// Observation accuracy per feature name on the training split.
    pub train_accuracy: BTreeMap<String, f64>,
    /// Observation accuracy per feature name on dev and test splits.
    pub test_accuracy: BTreeMap<String, f64>,
    pub seed: u64,
}

impl Default for GenConfig {
    /// Accuracies for the ACE schema: predictors are near
    /// perfect on training data and noticeably worse on held-out data.
    fn default() -> Self {
        let acc = |values: [f64; 5]| {
            ["Type", "Polarity", "Modality", "Genericity", "Tense"]
                .iter()
                .zip(values)
                .map(|(n, v)| (n.to_string(), v))
                .collect()
        };
        Self {
            documents: 200,
            tokens_per_doc: IntRange::new(24, 40),
            mentions_per_doc: IntRange::new(6, 10),
            clusters_per_doc: IntRange::new(2, 4),
            vocab_size: 120,
            trigger_ambiguity: 0.5,
            train_accuracy: acc([0.999, 0.999, 0.999, 0.999, 0.984]),
            test_accuracy: acc([0.953, 0.988, 0.884, 0.872, 0.763]),
            seed: 1,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        self.tokens_per_doc.check("tokens_per_doc")?;
        self.mentions_per_doc.check("mentions_per_doc")?;
        self.clusters_per_doc.check("clusters_per_doc")?;
        check_probability("trigger_ambiguity", self.trigger_ambiguity)?;
        for (name, &a) in self.train_accuracy.iter().chain(&self.test_accuracy) {
            check_probability(name, a)?;
        }
        if self.clusters_per_doc.min == 0 && self.mentions_per_doc.max > 0 {
            return Err(GenError::Infeasible("clusters_per_doc.min must be at least 1".into()));
        }
        if self.clusters_per_doc.min > self.mentions_per_doc.min {
            return Err(GenError::Infeasible(format!(
                "{} clusters requested but a document may have only {} mentions",
                self.clusters_per_doc.min, self.mentions_per_doc.min
            )));
        }
        if self.mentions_per_doc.max > self.tokens_per_doc.min {
            return Err(GenError::Infeasible(format!(
                "{} mentions do not fit in {} tokens",
                self.mentions_per_doc.max, self.tokens_per_doc.min
            )));
        }
        if self.vocab_size <= self.clusters_per_doc.max {
            return Err(GenError::Infeasible(format!(
                "vocabulary of {} leaves no context tokens beside {} triggers",
                self.vocab_size, self.clusters_per_doc.max
            )));
        }
        Ok(())
    }

    /// Per-feature accuracies for `split`, in schema order.
    pub fn accuracies(&self, schema: &FeatureSchema, split: Split) -> Result<Vec<f64>, GenError> {
        let table = match split {
            Split::Train => &self.train_accuracy,
            Split::Dev | Split::Test => &self.test_accuracy,
        };
        schema
            .names()
            .map(|n| {
                table
                    .get(n)
                    .copied()
                    .ok_or_else(|| GenError::MissingAccuracy(n.to_string()))
            })
            .collect()
    }

    /// Same accuracy for every feature on both splits.
    pub fn with_uniform_accuracy(mut self, schema: &FeatureSchema, value: f64) -> Self {
        let table: BTreeMap<_, _> = schema.names().map(|n| (n.to_string(), value)).collect();
        self.train_accuracy = table.clone();
        self.test_accuracy = table;
        self
    }
}

fn check_probability(name: &str, value: f64) -> Result<(), GenError> {
    if !(0.0..=1.0).contains(&value) {
        return Err(GenError::Probability {
            name: name.to_string(),
            value,
        });
    }
    Ok(())
}

pub fn token_name(id: usize) -> String {
    format!("w{id}")
}

/// Documents carrying true feature values and gold clusters.
pub fn generate_corpus(config: &GenConfig, schema: &FeatureSchema, split: Split) -> Result<Vec<Document>, GenError> {
    config.validate()?;
    Ok((0..config.documents)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, split.stream(), i as u64));
            generate_document(config, schema, format!("{}-{i:05}", split.name()), &mut rng)
        })
        .collect())
}

fn generate_document(config: &GenConfig, schema: &FeatureSchema, doc_id: String, rng: &mut ChaCha8Rng) -> Document {
    let n_tokens = config.tokens_per_doc.sample(rng);
    let k = config.mentions_per_doc.sample(rng);
    let clusters = if k == 0 {
        0
    } else {
        rng.gen_range(config.clusters_per_doc.min..=config.clusters_per_doc.max.min(k))
    };

    let mut positions = index::sample(rng, n_tokens, k).into_vec();
    positions.sort_unstable();

    // every event gets at least one mention
    let mut events: Vec<usize> = (0..clusters)
        .chain((clusters..k).map(|_| rng.gen_range(0..clusters)))
        .collect();
    events.shuffle(rng);

    // each later event reuses an earlier event's trigger with probability `trigger_ambiguity`
    // a trigger can be shared by at most as many events as there are feature combinations
    let combinations = schema
        .features()
        .iter()
        .try_fold(1usize, |acc, f| acc.checked_mul(f.cardinality as usize))
        .unwrap_or(usize::MAX);
    let mut triggers: Vec<usize> = index::sample(rng, config.vocab_size, clusters).into_vec();
    for e in 1..clusters {
        if rng.gen_bool(config.trigger_ambiguity) {
            let t = triggers[rng.gen_range(0..e)];
            if triggers[..e].iter().filter(|&&o| o == t).count() < combinations {
                triggers[e] = t;
            }
        }
    }

    let draw = |rng: &mut ChaCha8Rng| -> Vec<u32> {
        schema
            .features()
            .iter()
            .map(|f| rng.gen_range(1..=f.cardinality))
            .collect()
    };
    let mut values: Vec<Vec<u32>> = Vec::with_capacity(clusters);
    for e in 0..clusters {
        let mut v = draw(rng);
        // events sharing a trigger are told apart by their features
        while !schema.is_empty() && (0..e).any(|o| triggers[o] == triggers[e] && values[o] == v) {
            v = draw(rng);
        }
        values.push(v);
    }

    let trigger_set: HashSet<usize> = triggers.iter().copied().collect();
    let mut tokens: Vec<String> = (0..n_tokens)
        .map(|_| loop {
            let t = rng.gen_range(0..config.vocab_size);
            if !trigger_set.contains(&t) {
                break token_name(t);
            }
        })
        .collect();

    // gold ids in order of first appearance
    let mut relabel: Vec<Option<u32>> = vec![None; clusters];
    let mut next = 0;
    let mentions = positions
        .iter()
        .zip(&events)
        .map(|(&pos, &ev)| {
            tokens[pos] = token_name(triggers[ev]);
            let id = *relabel[ev].get_or_insert_with(|| {
                next += 1;
                next - 1
            });
            Mention::new(pos, pos, values[ev].clone(), Some(id))
        })
        .collect();

    Document {
        doc_id,
        tokens,
        mentions,
    }
}

/// Observed features next to the true values they were derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct Corrupted {
    pub observed: Vec<Document>,
    /// `truth[d][i]` holds the true values of mention `i` in document `d`.
    pub truth: Vec<Vec<Vec<u32>>>,
}

/// Simulate an imperfect feature predictor: each value is kept with
/// probability `accuracies[u]` and otherwise replaced by a uniform draw over
/// the other `N_u - 1` values.
pub fn corrupt_features(docs: &[Document], schema: &FeatureSchema, accuracies: &[f64], seed: u64) -> Corrupted {
    assert_eq!(accuracies.len(), schema.len(), "one accuracy per feature");
    let mut observed = docs.to_vec();
    let mut truth = Vec::with_capacity(docs.len());
    for (d, doc) in observed.iter_mut().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xC0_22, d as u64));
        truth.push(doc.mentions.iter().map(|m| m.features.clone()).collect());
        for m in &mut doc.mentions {
            for (u, value) in m.features.iter_mut().enumerate() {
                if rng.gen::<f64>() < accuracies[u] {
                    continue;
                }
                let other = rng.gen_range(1..schema.cardinality(u));
                *value = if other < *value { other } else { other + 1 };
            }
        }
    }
    Corrupted { observed, truth }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate_document;

    fn small_config() -> GenConfig {
        GenConfig {
            documents: 40,
            ..GenConfig::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let schema = FeatureSchema::ace();
        let a = generate_corpus(&small_config(), &schema, Split::Train).unwrap();
        let b = generate_corpus(&small_config(), &schema, Split::Train).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&small_config(), &schema, Split::Test).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_ambiguity_gives_unique_triggers() {
        let schema = FeatureSchema::ace();
        let config = GenConfig {
            trigger_ambiguity: 0.0,
            ..small_config()
        };
        for doc in generate_corpus(&config, &schema, Split::Train).unwrap() {
            let mut by_token: BTreeMap<&str, HashSet<u32>> = BTreeMap::new();
            for m in &doc.mentions {
                by_token
                    .entry(&doc.tokens[m.start])
                    .or_default()
                    .insert(m.gold_cluster.unwrap());
            }
            assert!(by_token.values().all(|c| c.len() == 1));
        }
    }

    #[test]
    fn generated_documents_validate_and_have_gold() {
        let schema = FeatureSchema::ace();
        for doc in generate_corpus(&small_config(), &schema, Split::Dev).unwrap() {
            validate_document(&doc, &schema).unwrap();
            let gold = doc.gold_clusters().unwrap();
            assert_eq!(gold[0], 0);
            let clusters: HashSet<_> = gold.iter().collect();
            assert!((2..=4).contains(&clusters.len()));
        }
    }

    #[test]
    fn shared_trigger_events_differ_in_features() {
        let schema = FeatureSchema::ace();
        let config = GenConfig {
            trigger_ambiguity: 1.0,
            ..small_config()
        };
        for doc in generate_corpus(&config, &schema, Split::Train).unwrap() {
            for a in &doc.mentions {
                for b in &doc.mentions {
                    if doc.tokens[a.start] == doc.tokens[b.start] && a.gold_cluster != b.gold_cluster {
                        assert_ne!(a.features, b.features);
                    }
                }
            }
        }
    }

    #[test]
    fn full_ambiguity_gives_one_trigger_per_document() {
        let schema = FeatureSchema::ace();
        let config = GenConfig {
            trigger_ambiguity: 1.0,
            ..small_config()
        };
        for doc in generate_corpus(&config, &schema, Split::Train).unwrap() {
            let triggers: HashSet<&str> = doc.mentions.iter().map(|m| doc.tokens[m.start].as_str()).collect();
            assert_eq!(triggers.len(), 1);
        }
    }

    #[test]
    fn sharing_is_capped_by_feature_combinations() {
        let schema = FeatureSchema::new([("Polarity", 2)]).unwrap();
        let config = GenConfig {
            trigger_ambiguity: 1.0,
            clusters_per_doc: IntRange::new(3, 4),
            ..small_config()
        };
        for doc in generate_corpus(&config, &schema, Split::Train).unwrap() {
            let mut by_token: BTreeMap<&str, HashSet<u32>> = BTreeMap::new();
            for m in &doc.mentions {
                by_token
                    .entry(&doc.tokens[m.start])
                    .or_default()
                    .insert(m.gold_cluster.unwrap());
            }
            assert!(by_token.values().all(|c| c.len() <= 2));
        }
    }

    #[test]
    fn infeasible_ranges_rejected() {
        let schema = FeatureSchema::ace();
        let config = GenConfig {
            clusters_per_doc: IntRange::new(8, 9),
            mentions_per_doc: IntRange::new(3, 5),
            ..small_config()
        };
        assert!(matches!(
            generate_corpus(&config, &schema, Split::Train),
            Err(GenError::Infeasible(_))
        ));
        let config = GenConfig {
            trigger_ambiguity: 1.5,
            ..small_config()
        };
        assert!(matches!(config.validate(), Err(GenError::Probability { .. })));
        let config = GenConfig {
            tokens_per_doc: IntRange::new(5, 4),
            ..small_config()
        };
        assert!(matches!(config.validate(), Err(GenError::EmptyRange { .. })));
    }

    #[test]
    fn perfect_accuracy_keeps_values() {
        let schema = FeatureSchema::ace();
        let docs = generate_corpus(&small_config(), &schema, Split::Train).unwrap();
        let out = corrupt_features(&docs, &schema, &[1.0; 5], 3);
        assert_eq!(out.observed, docs);
        assert_eq!(out.truth[0][0], docs[0].mentions[0].features);
    }

    #[test]
    fn zero_accuracy_binary_flips() {
        let schema = FeatureSchema::new([("Polarity", 2)]).unwrap();
        let config = small_config().with_uniform_accuracy(&schema, 0.0);
        let docs = generate_corpus(&config, &schema, Split::Train).unwrap();
        let out = corrupt_features(&docs, &schema, &[0.0], 5);
        for (o, d) in out.observed.iter().zip(&docs) {
            for (mo, md) in o.mentions.iter().zip(&d.mentions) {
                assert_eq!(mo.features[0], 3 - md.features[0]);
            }
        }
    }

    #[test]
    fn corruption_stays_in_range_and_keeps_structure() {
        let schema = FeatureSchema::ace();
        let docs = generate_corpus(&small_config(), &schema, Split::Train).unwrap();
        let out = corrupt_features(&docs, &schema, &[0.3; 5], 9);
        for (o, d) in out.observed.iter().zip(&docs) {
            validate_document(o, &schema).unwrap();
            assert_eq!(o.tokens, d.tokens);
            for (mo, md) in o.mentions.iter().zip(&d.mentions) {
                assert_eq!((mo.start, mo.end, mo.gold_cluster), (md.start, md.end, md.gold_cluster));
            }
        }
    }
}
