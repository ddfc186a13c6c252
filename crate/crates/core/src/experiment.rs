//! Ablation grid over model variants on shared synthetic corpora.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{corrupt_features, generate_corpus, Document, FeatureSchema, GenConfig, Split};
use crate::encoder::Vocabulary;
use crate::error::{ModelError, Result};
use crate::inference::{gold_clustering, predict_corpus};
use crate::metrics::{score_corpus, MetricReport};
use crate::model::{Dimensions, Init, Model, ModelConfig};
use crate::pair::Mode;
use crate::seed::derive_seed;
use crate::training::{train, TrainConfig};

const CORRUPT_STREAM: u64 = 0xC0;
const MODEL_STREAM: u64 = 0x3D;
const TRAIN_STREAM: u64 = 0x7A;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "simple")]
    Simple,
    #[serde(rename = "simple+noise")]
    SimpleNoise,
    #[serde(rename = "cdgm")]
    Cdgm,
    #[serde(rename = "cdgm+noise")]
    CdgmNoise,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::Simple,
        Variant::SimpleNoise,
        Variant::Cdgm,
        Variant::CdgmNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Simple => "simple",
            Variant::SimpleNoise => "simple+noise",
            Variant::Cdgm => "cdgm",
            Variant::CdgmNoise => "cdgm+noise",
        }
    }

    pub fn mode(self) -> Mode {
        match self {
            Variant::Baseline => Mode::Baseline,
            Variant::Simple | Variant::SimpleNoise => Mode::Simple,
            Variant::Cdgm | Variant::CdgmNoise => Mode::Cdgm,
        }
    }

    pub fn noise(self) -> bool {
        matches!(self, Variant::SimpleNoise | Variant::CdgmNoise)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub variants: Vec<Variant>,
    /// One repetition per seed; the seed drives corpus generation,
    /// corruption, initialization and batching.
    pub seeds: Vec<u64>,
    pub train_documents: usize,
    pub dev_documents: usize,
    pub test_documents: usize,
    /// Corpus shape and feature accuracies; `documents` and `seed` are
    /// overridden per split and repetition.
    pub corpus: GenConfig,
    pub dims: Dimensions,
    /// `seed` is overridden per repetition.
    pub train: TrainConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            seeds: vec![1, 2, 3, 4, 5],
            train_documents: 200,
            dev_documents: 50,
            test_documents: 100,
            corpus: GenConfig::default(),
            dims: Dimensions::default(),
            train: TrainConfig {
                epochs: 10,
                ..TrainConfig::default()
            },
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(ModelError::Config("experiment needs at least one variant".into()));
        }
        if self.seeds.is_empty() {
            return Err(ModelError::Config("experiment needs at least one seed".into()));
        }
        if self.train_documents == 0 || self.test_documents == 0 {
            return Err(ModelError::Config("train and test splits must be non-empty".into()));
        }
        self.corpus.validate().map_err(|e| ModelError::Config(e.to_string()))?;
        self.train.validate()
    }
}

/// Observed-feature corpora for one repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpora {
    pub train: Vec<Document>,
    pub dev: Vec<Document>,
    pub test: Vec<Document>,
}

/// Generate the three splits for `seed` and corrupt their features with the
/// split's accuracies.
pub fn build_corpora(spec: &ExperimentSpec, schema: &FeatureSchema, seed: u64) -> Result<Corpora> {
    let split = |split: Split, documents: usize| -> Result<Vec<Document>> {
        let config = GenConfig {
            documents,
            seed,
            ..spec.corpus.clone()
        };
        let gen_err = |e: crate::corpus::GenError| ModelError::Config(e.to_string());
        let docs = generate_corpus(&config, schema, split).map_err(gen_err)?;
        let acc = config.accuracies(schema, split).map_err(gen_err)?;
        let corrupt_seed = derive_seed(seed, CORRUPT_STREAM, split as u64);
        Ok(corrupt_features(&docs, schema, &acc, corrupt_seed).observed)
    };
    Ok(Corpora {
        train: split(Split::Train, spec.train_documents)?,
        dev: split(Split::Dev, spec.dev_documents)?,
        test: split(Split::Test, spec.test_documents)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub test: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub conll: f64,
    pub avg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub runs: Vec<RunResult>,
    pub summary: Vec<VariantSummary>,
}

impl ExperimentReport {
    pub fn run(&self, variant: Variant, seed: u64) -> Option<&RunResult> {
        self.runs.iter().find(|r| r.variant == variant && r.seed == seed)
    }

    /// Mean CoNLL and AVG per variant, in percent.
    pub fn table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<14} {:>8} {:>8}", "variant", "CoNLL", "AVG").unwrap();
        for (i, s) in self.summary.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            write!(
                out,
                "{:<14} {:>8.2} {:>8.2}",
                s.variant.name(),
                100.0 * s.conll,
                100.0 * s.avg
            )
            .unwrap();
        }
        out
    }
}

/// Train `variant` on `corpora` and score it on the test split.
pub fn run_variant(
    spec: &ExperimentSpec,
    schema: &FeatureSchema,
    corpora: &Corpora,
    variant: Variant,
    seed: u64,
) -> Result<RunResult> {
    let vocab = Vocabulary::from_documents(&corpora.train);
    let config = ModelConfig {
        mode: variant.mode(),
        dims: spec.dims,
        init: Init::Random,
        seed: derive_seed(seed, MODEL_STREAM, 0),
    };
    let mut model = Model::new(config, schema.clone(), vocab);
    let train_config = TrainConfig {
        noise: variant.noise(),
        seed: derive_seed(seed, TRAIN_STREAM, 0),
        ..spec.train.clone()
    };
    let dev = (!corpora.dev.is_empty()).then_some(corpora.dev.as_slice());
    let history = train(&mut model, &corpora.train, dev, &train_config)?;
    Ok(RunResult {
        variant,
        seed,
        best_epoch: history.best_epoch,
        test: evaluate(&model, &corpora.test)?,
    })
}

pub fn evaluate(model: &Model, docs: &[Document]) -> Result<MetricReport> {
    let predicted = predict_corpus(model, docs)?;
    let gold = docs
        .iter()
        .map(|d| gold_clustering(d).ok_or_else(|| ModelError::Config(format!("`{}` lacks gold clusters", d.doc_id))))
        .collect::<Result<Vec<_>>>()?;
    Ok(score_corpus(gold.iter().zip(&predicted)))
}

/// Every variant on every seed, sequentially. `progress` is called after
/// each run.
pub fn run_experiment(
    spec: &ExperimentSpec,
    schema: &FeatureSchema,
    mut progress: impl FnMut(&RunResult),
) -> Result<ExperimentReport> {
    spec.validate()?;
    let mut runs = Vec::with_capacity(spec.seeds.len() * spec.variants.len());
    for &seed in &spec.seeds {
        let corpora = build_corpora(spec, schema, seed)?;
        for &variant in &spec.variants {
            let r = run_variant(spec, schema, &corpora, variant, seed)?;
            progress(&r);
            runs.push(r);
        }
    }
    let summary = spec
        .variants
        .iter()
        .map(|&variant| {
            let mine: Vec<&RunResult> = runs.iter().filter(|r| r.variant == variant).collect();
            let n = mine.len() as f64;
            VariantSummary {
                variant,
                conll: mine.iter().map(|r| r.test.conll).sum::<f64>() / n,
                avg: mine.iter().map(|r| r.test.avg).sum::<f64>() / n,
            }
        })
        .collect();
    Ok(ExperimentReport { runs, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::IntRange;

    fn quick() -> ExperimentSpec {
        ExperimentSpec {
            variants: vec![Variant::Simple],
            seeds: vec![7],
            train_documents: 8,
            dev_documents: 4,
            test_documents: 4,
            corpus: GenConfig {
                mentions_per_doc: IntRange::new(3, 5),
                ..GenConfig::default()
            },
            dims: Dimensions {
                token_dim: 6,
                feature_dim: 3,
                pair_dim: 4,
                window: 1,
            },
            train: TrainConfig {
                epochs: 2,
                ..TrainConfig::default()
            },
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.name()));
        }
        assert!("cdgm+tense".parse::<Variant>().is_err());
    }

    #[test]
    fn single_variant_gives_one_row() {
        let report = run_experiment(&quick(), &FeatureSchema::ace(), |_| {}).unwrap();
        assert_eq!(report.summary.len(), 1);
        assert_eq!(report.table().lines().count(), 2);
        assert!(report.table().contains("simple"));
    }

    #[test]
    fn repeated_runs_are_identical() {
        let mut spec = quick();
        spec.variants = vec![Variant::Baseline, Variant::CdgmNoise];
        let a = run_experiment(&spec, &FeatureSchema::ace(), |_| {}).unwrap();
        let b = run_experiment(&spec, &FeatureSchema::ace(), |_| {}).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.table(), b.table());
    }

    #[test]
    fn corpora_share_seed_across_variants() {
        let spec = quick();
        let schema = FeatureSchema::ace();
        assert_eq!(
            build_corpora(&spec, &schema, 3).unwrap(),
            build_corpora(&spec, &schema, 3).unwrap()
        );
        assert_ne!(
            build_corpora(&spec, &schema, 3).unwrap(),
            build_corpora(&spec, &schema, 4).unwrap()
        );
    }

    #[test]
    fn empty_grid_rejected() {
        let mut spec = quick();
        spec.variants.clear();
        assert!(run_experiment(&spec, &FeatureSchema::ace(), |_| {}).is_err());
        let mut spec = quick();
        spec.seeds.clear();
        assert!(run_experiment(&spec, &FeatureSchema::ace(), |_| {}).is_err());
    }
}
