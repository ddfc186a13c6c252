//! Antecedent-ranking loss, feature noise and the optimization loop.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, FeatureSchema, Mention};
use crate::encoder::Vocabulary;
use crate::error::{ModelError, Result};
use crate::inference::{gold_clustering, predict_corpus, Antecedent};
use crate::math::{
    grad_check, log_sum_exp, GradCheckOptions, GradCheckReport, Gradients, NodeId, ParamStore, RateGroup, Tape,
};
use crate::metrics::score_corpus;
use crate::model::{Dimensions, Init, Model, ModelConfig};
use crate::pair::{Mode, PairScoreMatrix};
use crate::seed::derive_seed;

const SHUFFLE_STREAM: u64 = 0x5_4F;
const NOISE_STREAM: u64 = 0x4E_01;

/// Resampling probability `ε_u` per feature name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NoiseConfig(pub BTreeMap<String, f64>);

impl NoiseConfig {
    /// Probabilities for predicted features on the ACE schema.
    pub fn ace_predicted() -> Self {
        Self(
            [
                ("Type", 0.0),
                ("Polarity", 0.0),
                ("Modality", 0.15),
                ("Genericity", 0.15),
                ("Tense", 0.25),
            ]
            .into_iter()
            .map(|(n, e)| (n.to_string(), e))
            .collect(),
        )
    }

    pub fn uniform(schema: &FeatureSchema, epsilon: f64) -> Self {
        Self(schema.names().map(|n| (n.to_string(), epsilon)).collect())
    }

    /// `ε` in schema order. Every schema feature must be listed and no
    /// other names may appear.
    pub fn resolve(&self, schema: &FeatureSchema) -> Result<Vec<f64>> {
        if let Some(extra) = self.0.keys().find(|n| schema.index_of(n).is_none()) {
            return Err(ModelError::Config(format!("noise given for unknown feature `{extra}`")));
        }
        schema
            .names()
            .map(|n| match self.0.get(n) {
                Some(&e) if (0.0..=1.0).contains(&e) => Ok(e),
                Some(&e) => Err(ModelError::Config(format!("noise for `{n}` is {e}, outside [0, 1]"))),
                None => Err(ModelError::Config(format!("no noise probability for feature `{n}`"))),
            })
            .collect()
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::ace_predicted()
    }
}

/// Copy of `doc` where each feature value `u` is, with probability
/// `epsilon[u]`, replaced by a uniform draw over all `N_u` values.
pub fn apply_noise(doc: &Document, schema: &FeatureSchema, epsilon: &[f64], rng: &mut impl Rng) -> Document {
    let mut out = doc.clone();
    for m in &mut out.mentions {
        for (u, value) in m.features.iter_mut().enumerate() {
            if epsilon[u] > 0.0 && rng.gen::<f64>() < epsilon[u] {
                *value = rng.gen_range(1..=schema.cardinality(u));
            }
        }
    }
    out
}

/// Gold cluster id of every mention.
pub fn gold_labels(doc: &Document) -> Result<Vec<u32>> {
    doc.mentions
        .iter()
        .enumerate()
        .map(|(i, m)| m.gold_cluster.ok_or(ModelError::MissingGold(i)))
        .collect()
}

/// Earlier mentions in the same gold cluster as `i`, or the dummy alone.
pub fn gold_antecedents(i: usize, gold: &[u32]) -> Vec<Antecedent> {
    let found: Vec<Antecedent> = (0..i)
        .filter(|&j| gold[j] == gold[i])
        .map(Antecedent::Mention)
        .collect();
    if found.is_empty() {
        vec![Antecedent::Dummy]
    } else {
        found
    }
}

/// `-Σ_i log P(GOLD(i))` under a softmax over the dummy (score 0) and all
/// earlier mentions.
pub fn antecedent_nll(scores: &PairScoreMatrix, gold: &[u32]) -> f64 {
    let mut loss = 0.0;
    let mut all = Vec::new();
    let mut good = Vec::new();
    for i in 0..scores.mentions() {
        all.clear();
        good.clear();
        all.push(0.0);
        all.extend_from_slice(scores.row(i));
        for a in gold_antecedents(i, gold) {
            good.push(match a {
                Antecedent::Dummy => 0.0,
                Antecedent::Mention(j) => scores.get(i, j),
            });
        }
        loss += log_sum_exp(&all) - log_sum_exp(&good);
    }
    loss
}

/// Records the document loss on `tape`. Returns `None` when the document
/// has fewer than two mentions, where the loss is identically 0.
pub fn record_loss(model: &Model, tape: &mut Tape, doc: &Document, gold: &[u32]) -> Result<Option<NodeId>> {
    let scores = model.forward(tape, doc)?;
    if scores.is_empty() {
        return Ok(None);
    }
    let dummy = tape.constant(vec![0.0]);
    let mut total: Option<NodeId> = None;
    for i in 1..doc.mentions.len() {
        let row = &scores[PairScoreMatrix::index(i, 0)..PairScoreMatrix::index(i, 0) + i];
        let mut all = Vec::with_capacity(i + 1);
        all.push(dummy);
        all.extend_from_slice(row);
        let all = tape.concat(&all);
        let good: Vec<NodeId> = gold_antecedents(i, gold)
            .into_iter()
            .map(|a| match a {
                Antecedent::Dummy => dummy,
                Antecedent::Mention(j) => row[j],
            })
            .collect();
        let good = tape.concat(&good);
        let denom = tape.log_sum_exp(all)?;
        let numer = tape.log_sum_exp(good)?;
        let term = tape.sub(denom, numer)?;
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok(total)
}

/// Loss of one document under the current parameters.
pub fn document_loss(model: &Model, doc: &Document) -> Result<f64> {
    let gold = gold_labels(doc)?;
    let mut tape = Tape::inference(&model.store);
    Ok(record_loss(model, &mut tape, doc, &gold)?.map_or(0.0, |n| tape.scalar(n)))
}

/// Loss of one document and its gradient with respect to every parameter.
pub fn loss_and_gradients(model: &Model, doc: &Document) -> Result<(f64, Gradients)> {
    let gold = gold_labels(doc)?;
    let mut tape = Tape::new(&model.store);
    match record_loss(model, &mut tape, doc, &gold)? {
        Some(n) => Ok((tape.scalar(n), tape.backward(n)?)),
        None => Ok((0.0, Gradients::zeros_like(&model.store))),
    }
}

/// Finite-difference check of the full model gradient on one document.
/// `corrupt` names a parameter block whose analytic gradient is perturbed
/// before comparison. Feature regions absent because the schema is empty are
/// listed as skipped.
pub fn check_gradients(
    model: &Model,
    doc: &Document,
    options: GradCheckOptions,
    corrupt: Option<&str>,
) -> Result<GradCheckReport> {
    let (_, mut grads) = loss_and_gradients(model, doc)?;
    if let Some(name) = corrupt {
        let id = model
            .store
            .find(name)
            .ok_or_else(|| ModelError::Config(format!("no parameter block named `{name}`")))?;
        for g in grads.get_mut(id) {
            *g = 2.0 * *g + 1.0;
        }
    }
    let gold = gold_labels(doc)?;
    let mut scratch = model.store.clone();
    let mut report = grad_check(
        &mut scratch,
        &grads,
        |params: &ParamStore| {
            // the forward pass reads parameters only through the tape
            let mut tape = Tape::inference(params);
            record_loss(model, &mut tape, doc, &gold)
                .expect("forward succeeded on the same document")
                .map_or(0.0, |n| tape.scalar(n))
        },
        options,
    )?;
    if model.schema.is_empty() && model.mode() != Mode::Baseline {
        report.skipped.push("features.*.embeddings".into());
        report.skipped.push("ffnn_u.*".into());
        if model.mode() == Mode::Cdgm {
            report.skipped.push("ffnn_g.*".into());
        }
    }
    Ok(report)
}

/// Multiplier applied to initial parameters of a gradient-check instance.
///
/// At the initial scale many gate gradients sit near 1e-7, below what a
/// central difference with step 1e-5 resolves in f64.
pub const PROBE_SCALE: f64 = 2.0;

/// Dimensions of the gradient-check instance.
pub const PROBE_DIMS: Dimensions = Dimensions {
    token_dim: 4,
    feature_dim: 3,
    pair_dim: 3,
    window: 1,
};

/// A three-mention document where mentions 0 and 2 corefer.
pub fn probe_document(schema: &FeatureSchema) -> Document {
    let tokens = ["a", "fired", "b", "shot", "c", "fired"];
    Document {
        doc_id: "probe".into(),
        tokens: tokens.iter().map(|s| s.to_string()).collect(),
        mentions: [(1, 0), (3, 1), (5, 0)]
            .iter()
            .enumerate()
            .map(|(i, &(pos, gold))| {
                let features = (0..schema.len())
                    .map(|u| 1 + ((i + u) as u32 % schema.cardinality(u)))
                    .collect();
                Mention::new(pos, pos, features, Some(gold))
            })
            .collect(),
    }
}

/// Seeded model and document for a full gradient check.
pub fn probe_instance(mode: Mode, schema: FeatureSchema, dims: Dimensions, seed: u64) -> (Model, Document) {
    let doc = probe_document(&schema);
    let config = ModelConfig {
        mode,
        dims,
        init: Init::Random,
        seed,
    };
    let mut model = Model::new(config, schema, Vocabulary::from_documents([&doc]));
    for (_, p) in model.store.iter_mut() {
        for v in p.value.values_mut() {
            *v *= PROBE_SCALE;
        }
    }
    (model, doc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Rate for the encoder and feature embeddings.
    pub lower_lr: f64,
    /// Rate for every FFNN in the pair model.
    pub upper_lr: f64,
    /// Documents per update.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Resample feature values each time a batch is formed.
    pub noise: bool,
    #[serde(default)]
    pub epsilon: NoiseConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lower_lr: 1e-3,
            upper_lr: 2.5e-3,
            batch_size: 8,
            epochs: 30,
            seed: 1,
            noise: false,
            epsilon: NoiseConfig::ace_predicted(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lower_lr > 0.0 && self.lower_lr.is_finite()) || !(self.upper_lr > 0.0 && self.upper_lr.is_finite()) {
            return Err(ModelError::Config("learning rates must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    fn rate(&self, group: RateGroup) -> f64 {
        match group {
            RateGroup::Lower => self.lower_lr,
            RateGroup::Upper => self.upper_lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean document loss before any update, without noise.
    pub initial_loss: f64,
    /// Mean document loss seen during each epoch.
    pub epoch_loss: Vec<f64>,
    pub initial_dev_avg: Option<f64>,
    pub dev_avg: Vec<f64>,
    /// 1-based epoch whose parameters were kept, when a dev set was given.
    pub best_epoch: Option<usize>,
}

/// Adam moments for every parameter scalar.
pub struct Adam {
    m: Gradients,
    v: Gradients,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            m: Gradients::zeros_like(store),
            v: Gradients::zeros_like(store),
            t: 0,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, config: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let lr = config.rate(store.get(id).group);
            let g = grads.get(id);
            let m = self.m.get_mut(id);
            let v = self.v.get_mut(id);
            let w = store.get_mut(id).value.values_mut();
            for k in 0..w.len() {
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
                w[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

fn mean_loss(model: &Model, docs: &[Document]) -> Result<f64> {
    if docs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for d in docs {
        total += document_loss(model, d)?;
    }
    Ok(total / docs.len() as f64)
}

/// Corpus AVG of `model` against the gold clusters of `docs`.
pub fn evaluate_avg(model: &Model, docs: &[Document]) -> Result<f64> {
    let predicted = predict_corpus(model, docs)?;
    let gold = docs
        .iter()
        .enumerate()
        .map(|(d, doc)| {
            gold_clustering(doc).ok_or_else(|| ModelError::Config(format!("document {d} lacks gold clusters")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(score_corpus(gold.iter().zip(&predicted)).avg)
}

/// Optimize `model` in place. With a dev corpus the parameters of the best
/// dev-AVG epoch are kept (earliest on ties).
pub fn train(
    model: &mut Model,
    train_docs: &[Document],
    dev_docs: Option<&[Document]>,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    config.validate()?;
    for (d, doc) in train_docs.iter().enumerate() {
        gold_labels(doc).map_err(|e| ModelError::Config(format!("training document {d}: {e}")))?;
    }
    let epsilon = if config.noise {
        Some(config.epsilon.resolve(&model.schema)?)
    } else {
        None
    };

    let mut history = TrainHistory {
        initial_loss: mean_loss(model, train_docs)?,
        epoch_loss: Vec::with_capacity(config.epochs),
        initial_dev_avg: dev_docs.map(|d| evaluate_avg(model, d)).transpose()?,
        dev_avg: Vec::new(),
        best_epoch: None,
    };
    if train_docs.is_empty() {
        return Ok(history);
    }

    let mut adam = Adam::new(&model.store);
    let mut best: Option<(f64, ParamStore)> = None;
    let mut order: Vec<usize> = (0..train_docs.len()).collect();
    for epoch in 0..config.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SHUFFLE_STREAM, epoch as u64));
        order.shuffle(&mut shuffle_rng);
        let mut epoch_total = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grads = Gradients::zeros_like(&model.store);
            let mut batch_loss = 0.0;
            for (slot, &d) in batch.iter().enumerate() {
                let noisy;
                let doc = match &epsilon {
                    Some(eps) => {
                        let position = (b * config.batch_size + slot) as u64;
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                            derive_seed(config.seed, NOISE_STREAM, epoch as u64),
                            0,
                            position,
                        ));
                        noisy = apply_noise(&train_docs[d], &model.schema, eps, &mut rng);
                        &noisy
                    }
                    None => &train_docs[d],
                };
                let (loss, g) = loss_and_gradients(model, doc)?;
                batch_loss += loss;
                grads.accumulate(&g);
            }
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(ModelError::Diverged {
                    epoch: epoch + 1,
                    batch: b,
                    loss: batch_loss,
                });
            }
            epoch_total += batch_loss;
            adam.step(&mut model.store, &grads, config);
        }
        history.epoch_loss.push(epoch_total / train_docs.len() as f64);

        if let Some(dev) = dev_docs {
            let avg = evaluate_avg(model, dev)?;
            history.dev_avg.push(avg);
            if best.as_ref().is_none_or(|(b, _)| avg > *b) {
                best = Some((avg, model.store.clone()));
                history.best_epoch = Some(epoch + 1);
            }
        }
    }
    if let Some((_, store)) = best {
        model.store = store;
    }
    Ok(history)
}
