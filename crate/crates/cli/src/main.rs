mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use commands::Context;
use config::{resolve, Resolved};
use error::CliError;

const OUT_DIR_ENV: &str = "EVCOREF_OUT_DIR";

#[derive(Parser)]
#[command(name = "evcoref", version, about = "Event coreference with gated symbolic features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// JSON file layered over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed for the command.
    #[arg(long)]
    seed: Option<u64>,
    /// Override one setting, e.g. `--set training.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/dev/test corpora, gold keys and a manifest.
    Gen(Common),
    /// Train a model and write model.json and history.json.
    Train(Common),
    /// Cluster the mentions of a corpus with a trained model.
    Predict(Common),
    /// Score a response against a key.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        key: Option<PathBuf>,
        #[arg(long)]
        response: Option<PathBuf>,
    },
    /// Finite-difference check of the model gradients.
    Gradcheck(Common),
    /// Train and score every variant on every seed.
    Experiment(Common),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Score { .. } => "score",
            Command::Gradcheck(_) => "gradcheck",
            Command::Experiment(_) => "experiment",
        }
    }
}

fn layered<T: Serialize + DeserializeOwned>(
    defaults: T,
    common: &Common,
    seed_keys: &[&str],
    seed_value: impl Fn(u64) -> Value,
) -> Result<Resolved<T>, CliError> {
    let seeds: Vec<(&str, Value)> = match common.seed {
        Some(s) => seed_keys.iter().map(|k| (*k, seed_value(s))).collect(),
        None => Vec::new(),
    };
    resolve(&defaults, common.config.as_deref(), &seeds, &common.sets)
}

fn context(hash: String) -> Result<Context, CliError> {
    let out_dir = PathBuf::from(std::env::var_os(OUT_DIR_ENV).unwrap_or_else(|| "evcoref-out".into()));
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
    Ok(Context { out_dir, hash })
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Gen(c) => {
            let r = layered(commands::GenCmd::default(), &c, &["corpus.seed"], Value::from)?;
            let ctx = context(r.hash)?;
            let manifest = commands::gen(&r.config, &ctx)?;
            for f in manifest["files"].as_array().into_iter().flatten() {
                println!("{} {} documents", f["name"].as_str().unwrap_or(""), f["documents"]);
            }
        }
        Command::Train(c) => {
            let r = layered(
                commands::TrainCmd::default(),
                &c,
                &["seed", "training.seed"],
                Value::from,
            )?;
            let ctx = context(r.hash)?;
            let record = commands::train_cmd(&r.config, &ctx)?;
            let h = &record["history"];
            println!("initial loss {} dev AVG {}", h["initial_loss"], h["initial_dev_avg"]);
            for (i, l) in h["epoch_loss"].as_array().into_iter().flatten().enumerate() {
                println!("epoch {} loss {} dev AVG {}", i + 1, l, h["dev_avg"][i]);
            }
            println!("best epoch {}", h["best_epoch"]);
        }
        Command::Predict(c) => {
            let r = layered(commands::PredictCmd::default(), &c, &[], Value::from)?;
            let ctx = context(r.hash)?;
            let manifest = commands::predict(&r.config, &ctx)?;
            println!(
                "{} documents -> {}",
                manifest["documents"],
                manifest["response"].as_str().unwrap_or("")
            );
        }
        Command::Score { common, key, response } => {
            let mut r = layered(commands::ScoreCmd::default(), &common, &[], Value::from)?;
            if key.is_some() || response.is_some() {
                let mut cmd = r.config;
                cmd.key = key.or(cmd.key);
                cmd.response = response.or(cmd.response);
                r = resolve(&cmd, None, &[], &[])?;
            }
            let ctx = context(r.hash)?;
            let (_, table) = commands::score(&r.config, &ctx)?;
            println!("{table}");
        }
        Command::Gradcheck(c) => {
            let r = layered(commands::GradcheckCmd::default(), &c, &["seed"], Value::from)?;
            let ctx = context(r.hash)?;
            let (record, table) = commands::gradcheck(&r.config, &ctx)?;
            println!("{table}");
            println!(
                "passed, max relative error {:.3e}",
                record["max_rel_error"].as_f64().unwrap_or(0.0)
            );
        }
        Command::Experiment(c) => {
            let r = layered(commands::ExperimentCmd::default(), &c, &["experiment.seeds"], |s| {
                Value::from(vec![s])
            })?;
            let ctx = context(r.hash)?;
            let (_, table) = commands::experiment(&r.config, &ctx)?;
            println!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let message = e.to_string();
            let first = message
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            let err = CliError::Usage(first.to_string());
            eprintln!("{}", err.diagnostic("evcoref"));
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    let name = cli.command.name();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.diagnostic(name));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
