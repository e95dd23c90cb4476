//! `splatspa` command-line tool.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on invalid input or
//! configuration. `SPLATSPA_THREADS` caps the renderer's worker threads.

mod commands;
mod config;
mod csv;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use splatspa::train::PruneCriterion;

use config::RunArgs;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }

    pub fn from_runtime(e: splatspa::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}

impl From<splatspa::Error> for CliError {
    fn from(e: splatspa::Error) -> Self {
        use splatspa::Error as E;
        match e {
            E::NonFinite { .. } | E::Io { .. } => CliError::runtime(e.to_string()),
            _ => CliError::input(e.to_string()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Parser)]
#[command(name = "splatspa", version, about = "Sparse 2D Gaussian splatting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BaselineCriterion {
    Opacity,
    HitCount,
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
enum SparsifyRanking {
    #[default]
    Magnitude,
    HitCount,
}

#[derive(Subcommand)]
enum Command {
    /// Dense fit of a target image.
    Fit(RunArgs),
    /// Warmup, optimizing-sparsifying training, prune to kappa, light tuning.
    Sparsify {
        #[command(flatten)]
        run: RunArgs,
        /// Ranking used by the sparsifying projection.
        #[arg(long, value_enum, default_value_t)]
        ranking: SparsifyRanking,
    },
    /// Dense training with a single prune at prune_iter.
    Baseline {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "opacity")]
        criterion: BaselineCriterion,
        #[arg(long, default_value_t = 0.25, allow_negative_numbers = true)]
        keep_fraction: f64,
    },
    /// Keep the kappa highest-ranked vertices of a splat PLY file.
    PrunePly {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        #[arg(long)]
        kappa: usize,
        /// One score per line; ranks by opacity when omitted.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Print PSNR and SSIM of an image against a reference.
    Eval { image: PathBuf, gt: PathBuf },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("SPLATSPA_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| CliError::input(format!("SPLATSPA_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::runtime(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Fit(run) => commands::fit(&run),
        Command::Sparsify { run, ranking } => commands::sparsify(&run, matches!(ranking, SparsifyRanking::HitCount)),
        Command::Baseline {
            run,
            criterion,
            keep_fraction,
        } => {
            let criterion = match criterion {
                BaselineCriterion::Opacity => PruneCriterion::OpacityMagnitude,
                BaselineCriterion::HitCount => PruneCriterion::HitCount,
            };
            commands::baseline(&run, criterion, keep_fraction)
        }
        Command::PrunePly {
            input,
            output,
            kappa,
            scores,
        } => commands::prune_ply(&input, &output, kappa, scores.as_deref()),
        Command::Eval { image, gt } => commands::eval(&image, &gt),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
