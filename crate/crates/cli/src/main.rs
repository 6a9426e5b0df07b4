//! `cass`: command-line driver for synthetic data generation, training,
//! prediction, evaluation, attribution and report parsing.

mod commands;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use cass_core::Error;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "cass", version, about = "Coronary artery stenosis grading pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
pub struct Global {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (1 gives bitwise-reproducible runs).
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Write a synthetic MPR dataset with reports and ground truth.
    Generate(commands::GenerateArgs),
    /// Train the classifier on a generated dataset.
    Train(commands::TrainArgs),
    /// Learning-rate range test.
    LrFind(commands::LrFindArgs),
    /// Per-view class probabilities for every view of a dataset.
    Predict(commands::PredictArgs),
    /// Segment, artery and patient metrics from predictions and labels.
    Evaluate(commands::EvaluateArgs),
    /// Integrated Gradients heatmap for one image.
    Attribute(commands::AttributeArgs),
    /// Extract stenosis labels from a free-text report.
    ParseReport(commands::ParseReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Train(_) => "train",
            Command::LrFind(_) => "lr-find",
            Command::Predict(_) => "predict",
            Command::Evaluate(_) => "evaluate",
            Command::Attribute(_) => "attribute",
            Command::ParseReport(_) => "parse-report",
        }
    }
}

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CASS_LOG", "error")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            eprintln!("{}", error_line("usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> cass_core::Result<()> {
    if cli.global.threads == 0 {
        return Err(Error::Argument("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.threads)
        .build_global()
        .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
    commands::prepare_out(&cli.global.out)?;
    commands::write_json(&cli.global.out.join(format!("{}.config.json", cli.command.name())), cli)?;
    log::info!("{} -> {}", cli.command.name(), cli.global.out.display());
    let g = &cli.global;
    match &cli.command {
        Command::Generate(a) => commands::generate(g, a),
        Command::Train(a) => commands::train(g, a),
        Command::LrFind(a) => commands::lr_find(g, a),
        Command::Predict(a) => commands::predict(g, a),
        Command::Evaluate(a) => commands::evaluate(g, a),
        Command::Attribute(a) => commands::attribute(g, a),
        Command::ParseReport(a) => commands::parse_report(g, a),
    }
}
