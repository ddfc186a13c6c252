use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use evcoref::corpus::{corrupt_features, generate_corpus, load_corpus, save_corpus, FeatureSchema, GenConfig, Split};
use evcoref::digest::sha256_hex;
use evcoref::encoder::Vocabulary;
use evcoref::experiment::{run_experiment, ExperimentSpec};
use evcoref::inference::{gold_clustering, predict_document, Clustering, DocumentClusters};
use evcoref::math::GradCheckOptions;
use evcoref::metrics::score_corpus;
use evcoref::model::{Dimensions, Init, Model, ModelConfig};
use evcoref::pair::Mode;
use evcoref::seed::derive_seed;
use evcoref::training::{check_gradients, probe_instance, train, TrainConfig, PROBE_DIMS};

use crate::error::CliError;

const CORRUPT_STREAM: u64 = 0xC0;

pub struct Context {
    pub out_dir: PathBuf,
    pub hash: String,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn or_default(&self, given: &Option<PathBuf>, name: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.path(name))
    }
}

fn load_schema(path: &Option<PathBuf>) -> Result<FeatureSchema, CliError> {
    match path {
        None => Ok(FeatureSchema::ace()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn file_digest(path: &Path) -> Result<String, CliError> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| CliError::io(path, e))?))
}

fn write_clusters(path: &Path, docs: &[DocumentClusters]) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in docs {
        serde_json::to_writer(&mut w, d).expect("clusters serialize");
        w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn read_clusters(path: &Path) -> Result<Vec<DocumentClusters>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let d: DocumentClusters = serde_json::from_str(&line)
            .map_err(|e| CliError::Data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        let k = d.clusters.mention_count();
        if !d.clusters.is_partition_of(k) {
            return Err(CliError::Data(format!(
                "{} line {}: clusters of `{}` do not partition 0..{k}",
                path.display(),
                i + 1,
                d.doc_id
            )));
        }
        out.push(d);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenCmd {
    pub schema: Option<PathBuf>,
    pub train_documents: usize,
    pub dev_documents: usize,
    pub test_documents: usize,
    /// `documents` is replaced by the per-split counts.
    pub corpus: GenConfig,
}

impl Default for GenCmd {
    fn default() -> Self {
        Self {
            schema: None,
            train_documents: 200,
            dev_documents: 50,
            test_documents: 100,
            corpus: GenConfig::default(),
        }
    }
}

pub fn gen(cmd: &GenCmd, ctx: &Context) -> Result<Value, CliError> {
    let schema = load_schema(&cmd.schema)?;
    write_json(&ctx.path("schema.json"), &schema)?;
    let mut files = Vec::new();
    for (split, documents) in [
        (Split::Train, cmd.train_documents),
        (Split::Dev, cmd.dev_documents),
        (Split::Test, cmd.test_documents),
    ] {
        let config = GenConfig {
            documents,
            ..cmd.corpus.clone()
        };
        let truth = generate_corpus(&config, &schema, split).map_err(|e| CliError::Config(e.to_string()))?;
        let acc = config
            .accuracies(&schema, split)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let observed = corrupt_features(
            &truth,
            &schema,
            &acc,
            derive_seed(config.seed, CORRUPT_STREAM, split as u64),
        )
        .observed;
        let key: Vec<DocumentClusters> = truth
            .iter()
            .map(|d| DocumentClusters {
                doc_id: d.doc_id.clone(),
                clusters: gold_clustering(d).expect("generated documents carry gold"),
            })
            .collect();

        let name = split.name();
        let observed_name = format!("{name}.jsonl");
        let truth_name = format!("{name}.true.jsonl");
        let key_name = format!("{name}.key.jsonl");
        save_corpus(&observed, &schema, ctx.path(&observed_name))?;
        save_corpus(&truth, &schema, ctx.path(&truth_name))?;
        write_clusters(&ctx.path(&key_name), &key)?;
        for f in [observed_name, truth_name, key_name] {
            files.push(json!({
                "name": f,
                "documents": documents,
                "sha256": file_digest(&ctx.path(&f))?,
            }));
        }
    }
    let manifest = json!({
        "format": "evcoref-gen/1",
        "seed": cmd.corpus.seed,
        "config_hash": ctx.hash,
        "schema_hash": schema.hash(),
        "config": cmd,
        "files": files,
    });
    write_json(&ctx.path("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCmd {
    pub schema: Option<PathBuf>,
    /// Defaults to `train.jsonl` in the output directory.
    pub train: Option<PathBuf>,
    /// Defaults to `dev.jsonl` in the output directory when present.
    pub dev: Option<PathBuf>,
    pub mode: Mode,
    pub dims: Dimensions,
    pub init: Init,
    /// Initialization seed.
    pub seed: u64,
    pub training: TrainConfig,
}

impl Default for TrainCmd {
    fn default() -> Self {
        Self {
            schema: None,
            train: None,
            dev: None,
            mode: Mode::Cdgm,
            dims: Dimensions::default(),
            init: Init::Random,
            seed: 1,
            training: TrainConfig::default(),
        }
    }
}

pub fn train_cmd(cmd: &TrainCmd, ctx: &Context) -> Result<Value, CliError> {
    let schema = load_schema(&cmd.schema)?;
    let train_docs = load_corpus(ctx.or_default(&cmd.train, "train.jsonl"), &schema)?;
    let dev_path = match &cmd.dev {
        Some(p) => Some(p.clone()),
        None => Some(ctx.path("dev.jsonl")).filter(|p| p.exists()),
    };
    let dev_docs = dev_path.map(|p| load_corpus(p, &schema)).transpose()?;

    let config = ModelConfig {
        mode: cmd.mode,
        dims: cmd.dims,
        init: cmd.init,
        seed: cmd.seed,
    };
    let mut model = Model::new(config, schema, Vocabulary::from_documents(&train_docs));
    model.config_hash = Some(ctx.hash.clone());
    let history = train(&mut model, &train_docs, dev_docs.as_deref(), &cmd.training)?;
    model.save(ctx.path("model.json"))?;
    let record = json!({
        "config_hash": ctx.hash,
        "history": history,
    });
    write_json(&ctx.path("history.json"), &record)?;
    Ok(record)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictCmd {
    /// When given, must match the schema stored in the model.
    pub schema: Option<PathBuf>,
    /// Defaults to `model.json` in the output directory.
    pub model: Option<PathBuf>,
    /// Defaults to `test.jsonl` in the output directory.
    pub corpus: Option<PathBuf>,
    /// Defaults to `response.jsonl` in the output directory.
    pub output: Option<PathBuf>,
    pub drop_singletons: bool,
}

pub fn predict(cmd: &PredictCmd, ctx: &Context) -> Result<Value, CliError> {
    let model = Model::load(ctx.or_default(&cmd.model, "model.json"))?;
    if cmd.schema.is_some() {
        model.check_schema(&load_schema(&cmd.schema)?)?;
    }
    let docs = load_corpus(ctx.or_default(&cmd.corpus, "test.jsonl"), &model.schema)?;
    let response = docs
        .iter()
        .map(|d| {
            let clusters = predict_document(&model, d)?;
            Ok(DocumentClusters {
                doc_id: d.doc_id.clone(),
                clusters: if cmd.drop_singletons {
                    clusters.without_singletons()
                } else {
                    clusters
                },
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let output = ctx.or_default(&cmd.output, "response.jsonl");
    write_clusters(&output, &response)?;
    let manifest = json!({
        "config_hash": ctx.hash,
        "model_config_hash": model.config_hash,
        "schema_hash": model.schema.hash(),
        "documents": response.len(),
        "response": output.display().to_string(),
        "sha256": file_digest(&output)?,
    });
    write_json(&ctx.path("predict.manifest.json"), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreCmd {
    /// Defaults to `test.key.jsonl` in the output directory.
    pub key: Option<PathBuf>,
    /// Defaults to `response.jsonl` in the output directory.
    pub response: Option<PathBuf>,
}

/// Pairs key and response documents by id; every id must appear on both
/// sides exactly once.
pub fn align(
    key: Vec<DocumentClusters>,
    response: Vec<DocumentClusters>,
) -> Result<Vec<(Clustering, Clustering)>, CliError> {
    let mut by_id: HashMap<String, Clustering> = HashMap::new();
    for d in response {
        if by_id.insert(d.doc_id.clone(), d.clusters).is_some() {
            return Err(CliError::Data(format!("response repeats doc_id `{}`", d.doc_id)));
        }
    }
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::with_capacity(key.len());
    for d in key {
        if !seen.insert(d.doc_id.clone()) {
            return Err(CliError::Data(format!("key repeats doc_id `{}`", d.doc_id)));
        }
        let r = by_id
            .remove(&d.doc_id)
            .ok_or_else(|| CliError::Data(format!("response is missing doc_id `{}`", d.doc_id)))?;
        pairs.push((d.clusters, r));
    }
    if let Some(extra) = by_id.keys().min() {
        return Err(CliError::Data(format!("key is missing doc_id `{extra}`")));
    }
    Ok(pairs)
}

pub fn score(cmd: &ScoreCmd, ctx: &Context) -> Result<(Value, String), CliError> {
    let key = read_clusters(&ctx.or_default(&cmd.key, "test.key.jsonl"))?;
    let response = read_clusters(&ctx.or_default(&cmd.response, "response.jsonl"))?;
    let pairs = align(key, response)?;
    let report = score_corpus(pairs.iter().map(|(k, r)| (k, r)));
    let record = json!({
        "config_hash": ctx.hash,
        "documents": pairs.len(),
        "report": report,
    });
    write_json(&ctx.path("report.json"), &record)?;
    let table = report.table();
    std::fs::write(ctx.path("report.txt"), format!("{table}\n"))
        .map_err(|e| CliError::io(&ctx.path("report.txt"), e))?;
    Ok((record, table))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckCmd {
    pub mode: Mode,
    pub schema: FeatureSchema,
    pub dims: Dimensions,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Test hook: perturb the analytic gradient of this block.
    pub corrupt: Option<String>,
}

impl Default for GradcheckCmd {
    fn default() -> Self {
        let options = GradCheckOptions::default();
        Self {
            mode: Mode::Cdgm,
            schema: FeatureSchema::new([("Type", 3), ("Tense", 4)]).expect("valid schema"),
            dims: PROBE_DIMS,
            seed: 3,
            step: options.step,
            tolerance: options.tolerance,
            corrupt: None,
        }
    }
}

pub fn gradcheck(cmd: &GradcheckCmd, ctx: &Context) -> Result<(Value, String), CliError> {
    let (model, doc) = probe_instance(cmd.mode, cmd.schema.clone(), cmd.dims, cmd.seed);
    let options = GradCheckOptions {
        step: cmd.step,
        tolerance: cmd.tolerance,
    };
    let report = check_gradients(&model, &doc, options, cmd.corrupt.as_deref())?;
    let mut table = format!("{:<28} {:>8} {:>12}  status", "block", "scalars", "max rel err");
    for b in &report.blocks {
        table.push_str(&format!(
            "\n{:<28} {:>8} {:>12.3e}  {}",
            b.name,
            b.scalars,
            b.max_rel_error,
            if b.passed { "ok" } else { "FAIL" }
        ));
    }
    for s in &report.skipped {
        table.push_str(&format!("\n{s:<28} {:>8} {:>12}  skipped", 0, "-"));
    }
    let record = json!({
        "config_hash": ctx.hash,
        "passed": report.passed(),
        "max_rel_error": report.max_rel_error(),
        "report": report,
    });
    write_json(&ctx.path("gradcheck.json"), &record)?;
    if let Some(worst) = report
        .failures()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    {
        println!("{table}");
        let names: Vec<&str> = report.failures().map(|b| b.name.as_str()).collect();
        return Err(CliError::CheckFailed(format!(
            "gradient check failed on {} (worst {:.3e} in {}, tolerance {:.0e})",
            names.join(","),
            worst.max_rel_error,
            worst.name,
            report.tolerance
        )));
    }
    Ok((record, table))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentCmd {
    pub schema: Option<PathBuf>,
    pub experiment: ExperimentSpec,
}

pub fn experiment(cmd: &ExperimentCmd, ctx: &Context) -> Result<(Value, String), CliError> {
    let schema = load_schema(&cmd.schema)?;
    let report = run_experiment(&cmd.experiment, &schema, |r| {
        eprintln!(
            "seed {} {:<13} CoNLL {:6.2} AVG {:6.2}",
            r.seed,
            r.variant.name(),
            100.0 * r.test.conll,
            100.0 * r.test.avg
        );
    })?;
    let table = report.table();
    let record = json!({
        "config_hash": ctx.hash,
        "runs": report.runs,
        "summary": report.summary,
    });
    write_json(&ctx.path("experiment.json"), &record)?;
    std::fs::write(ctx.path("experiment.txt"), format!("{table}\n"))
        .map_err(|e| CliError::io(&ctx.path("experiment.txt"), e))?;
    Ok((record, table))
}
