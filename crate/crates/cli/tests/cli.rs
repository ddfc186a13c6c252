use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use evcoref::corpus::{load_corpus, save_corpus, Document, FeatureSchema, Mention};
use evcoref::encoder::Vocabulary;
use evcoref::inference::DocumentClusters;
use evcoref::model::{Dimensions, Init, Model, ModelConfig};
use evcoref::pair::Mode;

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evcoref"))
        .args(args)
        .env("EVCOREF_OUT_DIR", out)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = run(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn fails(out: &Path, args: &[&str]) -> (i32, String) {
    let o = run(out, args);
    assert!(!o.status.success(), "{args:?} unexpectedly succeeded");
    let stderr = String::from_utf8(o.stderr).unwrap();
    assert_eq!(
        stderr.trim_end().lines().count(),
        1,
        "diagnostic is one line: {stderr:?}"
    );
    assert!(stderr.starts_with("error: "), "{stderr}");
    (o.status.code().unwrap(), stderr)
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_slice(&read(path)).unwrap()
}

const SMALL: [&str; 6] = [
    "--set",
    "train_documents=30",
    "--set",
    "dev_documents=10",
    "--set",
    "test_documents=20",
];
const TINY_DIMS: &str = r#"dims={"token_dim":8,"feature_dim":3,"pair_dim":6,"window":1}"#;

fn small_gen(out: &Path, seed: &str) {
    ok(out, &[&["gen", "--seed", seed][..], &SMALL[..]].concat());
}

fn write_clusters(path: &Path, docs: &[(&str, Vec<Vec<usize>>)]) {
    let lines: Vec<String> = docs
        .iter()
        .map(|(id, c)| serde_json::json!({"doc_id": id, "clusters": c}).to_string())
        .collect();
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

#[test]
fn gen_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    small_gen(a.path(), "1");
    small_gen(b.path(), "1");
    for name in [
        "train.jsonl",
        "dev.true.jsonl",
        "test.key.jsonl",
        "schema.json",
        "manifest.json",
    ] {
        assert_eq!(read(a.path().join(name)), read(b.path().join(name)), "{name}");
    }
    let c = tempfile::tempdir().unwrap();
    small_gen(c.path(), "2");
    assert_ne!(read(a.path().join("train.jsonl")), read(c.path().join("train.jsonl")));
}

#[test]
fn gen_with_no_documents_writes_empty_files_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "gen",
            "--set",
            "train_documents=0",
            "--set",
            "dev_documents=0",
            "--set",
            "test_documents=0",
        ],
    );
    for split in ["train", "dev", "test"] {
        assert!(read(dir.path().join(format!("{split}.jsonl"))).is_empty());
    }
    let manifest = json(dir.path().join("manifest.json"));
    assert_eq!(manifest["format"], "evcoref-gen/1");
    assert_eq!(manifest["files"].as_array().unwrap().len(), 9);
    assert!(manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .all(|f| f["documents"] == 0));
}

#[test]
fn gen_writes_requested_counts() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "gen",
            "--set",
            "train_documents=500",
            "--set",
            "dev_documents=100",
            "--set",
            "test_documents=100",
        ],
    );
    let schema = FeatureSchema::ace();
    for (split, n) in [("train", 500), ("dev", 100), ("test", 100)] {
        assert_eq!(
            load_corpus(dir.path().join(format!("{split}.jsonl")), &schema)
                .unwrap()
                .len(),
            n
        );
        assert_eq!(
            load_corpus(dir.path().join(format!("{split}.true.jsonl")), &schema)
                .unwrap()
                .len(),
            n
        );
        let keys = String::from_utf8(read(dir.path().join(format!("{split}.key.jsonl")))).unwrap();
        assert_eq!(keys.lines().count(), n);
    }
}

#[test]
fn zero_epochs_keep_initialization_and_reruns_match() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    small_gen(out, "4");
    ok(
        out,
        &["train", "--seed", "9", "--set", "training.epochs=0", "--set", TINY_DIMS],
    );
    let saved = Model::load(out.join("model.json")).unwrap();

    let train = load_corpus(out.join("train.jsonl"), &FeatureSchema::ace()).unwrap();
    let config = ModelConfig {
        mode: Mode::Cdgm,
        dims: Dimensions {
            token_dim: 8,
            feature_dim: 3,
            pair_dim: 6,
            window: 1,
        },
        init: Init::Random,
        seed: 9,
    };
    let mut fresh = Model::new(config, FeatureSchema::ace(), Vocabulary::from_documents(&train));
    fresh.config_hash = saved.config_hash.clone();
    assert_eq!(
        fresh.to_json(),
        String::from_utf8(read(out.join("model.json"))).unwrap()
    );

    let first = read(out.join("model.json"));
    ok(
        out,
        &["train", "--seed", "9", "--set", "training.epochs=2", "--set", TINY_DIMS],
    );
    let trained = read(out.join("model.json"));
    assert_ne!(first, trained);
    ok(
        out,
        &["train", "--seed", "9", "--set", "training.epochs=2", "--set", TINY_DIMS],
    );
    assert_eq!(trained, read(out.join("model.json")));
}

#[test]
fn cdgm_training_improves_dev_avg() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["gen"]);
    ok(out, &["train", "--set", "training.epochs=5"]);
    let history = &json(out.join("history.json"))["history"];
    let initial = history["initial_dev_avg"].as_f64().unwrap();
    let best = history["dev_avg"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .fold(0.0, f64::max);
    assert!(best > initial, "dev AVG {initial} -> {best}");
    assert!(history["best_epoch"].as_u64().unwrap() >= 1);
}

#[test]
fn zero_model_predicts_singletons_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    small_gen(out, "5");
    ok(
        out,
        &[
            "train",
            "--set",
            "init=\"zero\"",
            "--set",
            "training.epochs=0",
            "--set",
            TINY_DIMS,
        ],
    );
    ok(out, &["predict"]);
    let response = String::from_utf8(read(out.join("response.jsonl"))).unwrap();
    assert_eq!(response.lines().count(), 20);
    for line in response.lines() {
        let d: DocumentClusters = serde_json::from_str(line).unwrap();
        assert!(d.clusters.clusters().iter().all(|c| c.len() == 1), "{line}");
    }

    let schema = FeatureSchema::ace();
    let single: Vec<Document> = (0..3)
        .map(|i| Document {
            doc_id: format!("one{i}"),
            tokens: vec!["x".into(), "attacked".into()],
            mentions: vec![Mention::new(1, 1, vec![1; schema.len()], None)],
        })
        .collect();
    save_corpus(&single, &schema, out.join("single.jsonl")).unwrap();
    let single_path = out.join("single.jsonl");
    let single_out = out.join("single.response.jsonl");
    ok(out, &["train", "--set", "training.epochs=1", "--set", TINY_DIMS]);
    ok(
        out,
        &[
            "predict",
            "--set",
            &format!("corpus={:?}", single_path),
            "--set",
            &format!("output={:?}", single_out),
        ],
    );
    for line in String::from_utf8(read(&single_out)).unwrap().lines() {
        let d: DocumentClusters = serde_json::from_str(line).unwrap();
        assert_eq!(d.clusters.clusters(), &[vec![0]]);
    }

    ok(out, &["predict"]);
    let a = read(out.join("response.jsonl"));
    ok(out, &["predict"]);
    assert_eq!(a, read(out.join("response.jsonl")));
    assert!(json(out.join("predict.manifest.json"))["config_hash"].is_string());
}

#[test]
fn predict_rejects_other_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    small_gen(out, "6");
    ok(out, &["train", "--set", "training.epochs=0", "--set", TINY_DIMS]);
    let other = out.join("other.schema.json");
    std::fs::write(&other, r#"{"Type": 3}"#).unwrap();
    let (code, msg) = fails(out, &["predict", "--set", &format!("schema={:?}", other)]);
    assert_eq!(code, 1);
    assert!(msg.starts_with("error: predict: schema: "), "{msg}");
}

#[test]
fn score_perfect_and_worked_responses() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let key = out.join("key.jsonl");
    let resp = out.join("resp.jsonl");
    write_clusters(&key, &[("d1", vec![vec![0, 1, 2], vec![3, 4]])]);
    let table = ok(
        out,
        &[
            "score",
            "--key",
            key.to_str().unwrap(),
            "--response",
            key.to_str().unwrap(),
        ],
    );
    assert!(table.contains("AVG"));
    let report = &json(out.join("report.json"))["report"];
    for m in ["muc", "b3", "ceaf_e", "blanc"] {
        assert_eq!(report[m]["f1"], 1.0, "{m}");
    }

    write_clusters(&resp, &[("d1", vec![vec![0, 1], vec![2, 3, 4]])]);
    ok(
        out,
        &[
            "score",
            "--key",
            key.to_str().unwrap(),
            "--response",
            resp.to_str().unwrap(),
        ],
    );
    let record = json(out.join("report.json"));
    let r = &record["report"];
    let f = |v: &Value| v.as_f64().unwrap();
    let b3 = 11.0 / 15.0;
    let blanc = (0.5 + 2.0 / 3.0) / 2.0;
    for (got, want) in [
        (f(&r["muc"]["f1"]), 2.0 / 3.0),
        (f(&r["b3"]["f1"]), b3),
        (f(&r["ceaf_e"]["f1"]), 0.8),
        (f(&r["blanc"]["f1"]), blanc),
        (f(&r["conll"]), (2.0 / 3.0 + b3 + 0.8) / 3.0),
        (f(&r["avg"]), (2.0 / 3.0 + b3 + 0.8 + blanc) / 4.0),
    ] {
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }
    assert!(record["config_hash"].is_string());
    assert!(String::from_utf8(read(out.join("report.txt")))
        .unwrap()
        .contains("CEAF_e"));
}

#[test]
fn score_rejects_mismatched_documents() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let key = out.join("key.jsonl");
    let resp = out.join("resp.jsonl");
    write_clusters(&key, &[("d1", vec![vec![0]]), ("d2", vec![vec![0, 1]])]);
    write_clusters(&resp, &[("d1", vec![vec![0]])]);
    let args = [
        "score",
        "--key",
        key.to_str().unwrap(),
        "--response",
        resp.to_str().unwrap(),
    ];
    let (code, msg) = fails(out, &args);
    assert_eq!(code, 1);
    assert!(msg.contains("error: score: data:") && msg.contains("`d2`"), "{msg}");

    write_clusters(
        &resp,
        &[("d1", vec![vec![0]]), ("d2", vec![vec![0, 1]]), ("d3", vec![vec![0]])],
    );
    assert!(fails(out, &args).1.contains("`d3`"));
    write_clusters(
        &resp,
        &[("d1", vec![vec![0]]), ("d1", vec![vec![0]]), ("d2", vec![vec![0, 1]])],
    );
    assert!(fails(out, &args).1.contains("repeats doc_id `d1`"));
    write_clusters(&resp, &[("d1", vec![vec![0]]), ("d2", vec![vec![0, 2]])]);
    assert!(fails(out, &args).1.contains("do not partition"));
}

#[test]
fn gradcheck_default_corrupted_and_featureless() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let stdout = ok(out, &["gradcheck"]);
    assert!(stdout.contains("ffnn_g.Tense.w1") && stdout.contains("passed"));
    let record = json(out.join("gradcheck.json"));
    assert_eq!(record["passed"], true);
    assert!(record["max_rel_error"].as_f64().unwrap() < 1e-4);

    let (code, msg) = fails(out, &["gradcheck", "--set", "corrupt=ffnn_g.Type.b2"]);
    assert_eq!(code, 1);
    assert!(
        msg.starts_with("error: gradcheck: check: ") && msg.contains("ffnn_g.Type.b2"),
        "{msg}"
    );
    assert_eq!(json(out.join("gradcheck.json"))["passed"], false);

    let stdout = ok(out, &["gradcheck", "--set", "schema={}"]);
    for block in ["features.*.embeddings", "ffnn_u.*", "ffnn_g.*"] {
        assert!(stdout.contains(block), "{block} not listed");
    }
    let skipped = &json(out.join("gradcheck.json"))["report"]["skipped"];
    assert_eq!(skipped.as_array().unwrap().len(), 3);
}

#[test]
fn experiment_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let args = [
        "experiment",
        "--seed",
        "3",
        "--set",
        r#"experiment.variants=["cdgm"]"#,
        "--set",
        "experiment.train_documents=10",
        "--set",
        "experiment.dev_documents=4",
        "--set",
        "experiment.test_documents=4",
        "--set",
        "experiment.train.epochs=1",
        "--set",
        r#"experiment.dims={"token_dim":8,"feature_dim":3,"pair_dim":6,"window":1}"#,
    ];
    let first = ok(out, &args);
    assert_eq!(first.lines().count(), 2, "{first}");
    assert!(first.lines().nth(1).unwrap().starts_with("cdgm "));
    let record = json(out.join("experiment.json"));
    assert_eq!(record["runs"].as_array().unwrap().len(), 1);
    assert_eq!(record["runs"][0]["seed"], 3);
    let second = ok(out, &args);
    assert_eq!(first, second);
}

#[test]
fn errors_are_single_line_and_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(fails(out, &["frobnicate"]).0, 2);
    assert_eq!(fails(out, &["train", "--seed", "x"]).0, 2);
    let (code, msg) = fails(out, &["train", "--set", "training.epochs=-1"]);
    assert_eq!(code, 1);
    assert!(msg.starts_with("error: train: config: "), "{msg}");
    assert!(fails(out, &["train", "--set", "nonsense=1"]).1.contains("config"));
    assert!(fails(out, &["train"]).1.starts_with("error: train: corpus: "));
    assert!(fails(out, &["gen", "--config", "/no/such.json"])
        .1
        .starts_with("error: gen: io: "));
    assert!(fails(out, &["predict"]).1.starts_with("error: predict: "));
    assert!(run(out, &["--help"]).status.success());
    assert!(run(out, &["train", "--help"]).status.success());
}

#[test]
fn config_file_layers_under_set_and_every_artifact_has_a_hash() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = out.join("gen.json");
    std::fs::write(
        &cfg,
        r#"{"train_documents": 5, "dev_documents": 3, "test_documents": 4, "corpus": {"seed": 8}}"#,
    )
    .unwrap();
    ok(
        out,
        &["gen", "--config", cfg.to_str().unwrap(), "--set", "test_documents=2"],
    );
    let manifest = json(out.join("manifest.json"));
    assert_eq!(manifest["config"]["train_documents"], 5);
    assert_eq!(manifest["config"]["test_documents"], 2);
    assert_eq!(manifest["seed"], 8);

    ok(out, &["train", "--set", "training.epochs=1", "--set", TINY_DIMS]);
    ok(out, &["predict"]);
    ok(out, &["score"]);
    let model = json(out.join("model.json"));
    let history = json(out.join("history.json"));
    assert_eq!(model["config_hash"], history["config_hash"]);
    for name in [
        "manifest.json",
        "model.json",
        "history.json",
        "predict.manifest.json",
        "report.json",
    ] {
        let hash = json(out.join(name))["config_hash"].as_str().map(str::to_owned);
        assert_eq!(hash.map(|h| h.len()), Some(64), "{name}");
    }

    let reloaded = Model::load(out.join("model.json")).unwrap();
    reloaded.save(out.join("again.json")).unwrap();
    assert_eq!(read(out.join("model.json")), read(out.join("again.json")));
}
