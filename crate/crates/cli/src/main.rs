//! `stformer` command-line entry point.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stformer::Error;

#[derive(Parser, Debug)]
#[command(
    name = "stformer",
    version,
    about = "Stochastic transformer for audio severity-score regression"
)]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Seed for every random draw (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel extraction and inference (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// `key = value` config file (model.*, feature.*, train.*, seed).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compute MFCC features of a WAV file and write them as text.
    Extract { input: PathBuf, output: PathBuf },
    /// Write a synthetic corpus (participant folders plus index.csv).
    Synth {
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Clip length in seconds.
        #[arg(long, default_value_t = 1.3)]
        duration: f64,
    },
    /// Train on the train split, select on the dev split, save the best checkpoint.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Index file, relative to the corpus root.
        #[arg(long, default_value = "index.csv")]
        index: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the training report (default: `<out>.report.tsv`).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "index.csv")]
        index: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Print the predicted score for one WAV or MFCC file.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        input: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
}

/// Failure categories, mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let m = e.to_string();
        match e {
            Error::Config(_) => Failure::Usage(m),
            Error::Numeric(_) | Error::UndefinedMetric(_) => Failure::Numeric(m),
            _ => Failure::Data(m),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
