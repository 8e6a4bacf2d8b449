//! `aquafeat`: prepare data, train, enhance, evaluate and benchmark.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "aquafeat",
    version,
    about = "Task-driven underwater image enhancement"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// key=value config file; `#` starts a comment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample frames, unify labels and assign splits.
    Dataset(commands::DatasetArgs),
    /// Train enhancer and head through the detection loss.
    Train(commands::TrainArgs),
    /// Enhance one PPM image or every PPM in a directory.
    Enhance(commands::EnhanceArgs),
    /// Detection metrics on one split of a manifest.
    Eval(commands::EvalArgs),
    /// Throughput of the enhance, detect and decode path.
    Bench(commands::BenchArgs),
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(aquafeat_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(aquafeat_core::Error::NonFinite(_)) => 3,
            CliError::Core(_) => 2,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message())
    }
}

impl From<aquafeat_core::Error> for CliError {
    fn from(e: aquafeat_core::Error) -> Self {
        CliError::Core(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Dataset(a) => commands::dataset(a),
        Command::Train(a) => commands::train(a),
        Command::Enhance(a) => commands::enhance(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
