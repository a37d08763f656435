mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mixlab::dgp::DgpError;
use mixlab::experiments::ExperimentError;

use config::{AnswerArgs, EvalArgs, GenerateArgs, HighDimArgs, LiaArgs, SweepArgs};

/// Finite Markov mixture laboratory.
#[derive(Debug, Parser)]
#[command(name = "mixlab", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command.
#[derive(Clone, Debug, clap::Args)]
pub struct Common {
    /// TOML config; flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed. Derived from the config hash when absent.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "mixlab-out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a chain set and optionally a sequence corpus.
    Generate {
        #[command(flatten)]
        args: GenerateArgs,
    },
    /// Evaluate predictors on one (k, N, l_eval) cell.
    Eval {
        #[command(flatten)]
        args: EvalArgs,
    },
    /// Evaluate predictors over a grid of cells.
    Sweep {
        #[command(flatten)]
        args: SweepArgs,
        /// Keep finished cells of this config's existing table.
        #[arg(long)]
        resume: bool,
        /// Keep finished cells of another table, e.g. a smaller grid.
        #[arg(long, conflicts_with = "resume")]
        resume_from: Option<PathBuf>,
        /// Write the context manifests instead of running.
        #[arg(long)]
        manifest_only: bool,
    },
    /// Nearest-neighbour versus mean-matrix distance as k grows.
    Highdim {
        #[command(flatten)]
        args: HighDimArgs,
    },
    /// Fit a target as a convex mixture of algorithms and predict its OOD error.
    Lia {
        #[command(flatten)]
        args: LiaArgs,
    },
    /// Write the contexts an LIA study will query.
    Manifest {
        #[command(flatten)]
        args: LiaArgs,
    },
    /// Answer a manifest with a built-in predictor.
    Answer {
        #[command(flatten)]
        args: AnswerArgs,
    },
}

#[derive(Debug)]
pub enum Failure {
    /// Bad config or arguments; exit code 2.
    Validation(String),
    /// Exit code 1.
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn invalid(e: impl ToString) -> Self {
        Failure::Validation(e.to_string())
    }
}

macro_rules! via_anyhow {
    ($($t:ty),*) => {
        $(impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                anyhow::Error::new(e).into()
            }
        })*
    };
}

via_anyhow!(
    ExperimentError,
    DgpError,
    mixlab::predictors::PredictError,
    mixlab::evaluation::EvalError,
    mixlab::lia::LiaError,
    std::io::Error
);

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let validation = match e.downcast_ref::<ExperimentError>() {
            Some(ExperimentError::InvalidSpec(_)) => true,
            Some(ExperimentError::Dgp(DgpError::InvalidConfig(_))) => true,
            _ => matches!(
                e.downcast_ref::<DgpError>(),
                Some(DgpError::InvalidConfig(_))
            ),
        };
        if validation {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let c = cli.common;
    match cli.command {
        Command::Generate { args } => commands::generate(&c, args),
        Command::Eval { args } => commands::eval(&c, args),
        Command::Sweep {
            args,
            resume,
            resume_from,
            manifest_only,
        } => commands::sweep(&c, args, resume, resume_from, manifest_only),
        Command::Highdim { args } => commands::highdim(&c, args),
        Command::Lia { args } => commands::lia(&c, args),
        Command::Manifest { args } => commands::manifest(&c, args),
        Command::Answer { args } => commands::answer(&c, args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
