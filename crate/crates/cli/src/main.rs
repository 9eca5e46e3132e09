//! `cpnet`: train, evaluate and inspect CP-format predictors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cpnet_core::{Error, ErrorCategory, Result};

use commands::Sweep;
use config::{RunConfig, Settings};

#[derive(Parser)]
#[command(name = "cpnet", version, about = "CP-format tensor predictors for non-sequential data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write model.json, report.csv and preprocess.json to --out
    Train(Settings),
    /// Score a trained model on a labelled CSV
    Evaluate(EvaluateArgs),
    /// Write one prediction per CSV row
    Predict(PredictArgs),
    /// Print one weight-tensor coefficient of a trained model
    Inspect(InspectArgs),
    /// Train once per local dimension in --d-values
    SweepD(Settings),
    /// Train once per rank in --rank-values
    SweepRank(Settings),
    /// Write a synthetic polynomial regression CSV
    GenSynthetic(GenArgs),
}

#[derive(Args)]
struct ModelInput {
    /// Model file written by `train`
    #[arg(long)]
    model: PathBuf,
    /// Input CSV
    #[arg(long)]
    data: PathBuf,
    /// Preprocessing file; defaults to preprocess.json next to the model
    #[arg(long)]
    preprocess: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    input: ModelInput,
    /// mse, auc or accuracy
    #[arg(long, default_value = "mse")]
    metric: String,
    /// Decision threshold for accuracy
    #[arg(long, default_value_t = config::DEFAULT_THRESHOLD)]
    threshold: f64,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    input: ModelInput,
    /// Output CSV; standard output when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    /// Model file written by `train`
    #[arg(long)]
    model: PathBuf,
    /// One-based local index per feature, comma-separated; all ones is the bias
    #[arg(long)]
    index: String,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    settings: Settings,
    /// Drop the second-order terms from the target
    #[arg(long)]
    linear_only: bool,
}

fn resolve(settings: Settings) -> Result<RunConfig> {
    RunConfig::resolve(settings.with_file()?)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(s) => commands::train(&resolve(s)?),
        Command::SweepD(s) => commands::sweep(&resolve(s)?, Sweep::LocalDim),
        Command::SweepRank(s) => commands::sweep(&resolve(s)?, Sweep::Rank),
        Command::Evaluate(a) => {
            let metric = config::parse_metric(&a.metric, a.threshold)?;
            commands::evaluate(&a.input.model, &a.input.data, a.input.preprocess.as_deref(), metric)
        }
        Command::Predict(a) => commands::predict(
            &a.input.model,
            &a.input.data,
            a.input.preprocess.as_deref(),
            a.out.as_deref(),
        ),
        Command::Inspect(a) => commands::inspect(&a.model, &a.index),
        Command::GenSynthetic(a) => {
            let out = a
                .settings
                .out
                .clone()
                .ok_or_else(|| Error::Usage("gen-synthetic needs --out <file.csv>".into()))?;
            commands::gen_synthetic(&resolve(a.settings)?, &out, a.linear_only)
        }
    }
}

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Usage => 1,
        ErrorCategory::Data => 2,
        ErrorCategory::Numeric => 3,
    }
}

/// Collapses a possibly multi-line message onto one line.
fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let msg = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("error[usage]: {}", one_line(msg));
            return ExitCode::from(exit_code(ErrorCategory::Usage));
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            eprintln!("error[{}]: {}", category.as_str(), one_line(&e.to_string()));
            ExitCode::from(exit_code(category))
        }
    }
}
