//! `viewnav`: config-driven front end for the active-perception toolkit.
//!
//! Exit codes: 0 ok, 1 runtime failure, 2 config or usage error, 3 missing
//! input file, 4 schema mismatch, 5 empty dataset.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use viewnav::Pose;

use commands::{Context, Inputs};
use config::RunConfig;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "viewnav", version, about = "Active-perception simulation toolkit")]
struct Cli {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed; overrides the config value.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,

    /// Output directory; overrides the config value (default `out`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads. Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Export the confidence manifold as CSV.
    Manifold,
    /// Generate the labelled dataset.
    Labels,
    /// Train the regressor and the direction classifier.
    Train {
        /// Dataset to train on (default `<out>/dataset.jsonl`).
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
    },
    /// Run a single episode from a given pose.
    Episode {
        #[arg(long, default_value = "regression")]
        policy: String,
        /// Initial bearing in radians.
        #[arg(long, allow_hyphen_values = true)]
        theta: f64,
        /// Initial distance.
        #[arg(long)]
        r: f64,
        /// Directory holding the trained models (default: the output directory).
        #[arg(long, value_name = "DIR")]
        models: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
    },
    /// Evaluate the configured policies on paired random initial poses.
    Eval {
        #[arg(long, value_name = "DIR")]
        models: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli.out.clone().or_else(|| config.out.clone()).unwrap_or_else(|| "out".into());
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    // Dataset generation uses the global pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();

    let ctx = Context::new(config, out, jobs)?;
    let inputs = |models: Option<PathBuf>, dataset: Option<PathBuf>| Inputs {
        models: models.unwrap_or_else(|| ctx.out.clone()),
        dataset: dataset.unwrap_or_else(|| ctx.out.join(commands::DATASET)),
    };
    match cli.command {
        Command::Manifold => commands::manifold(&ctx),
        Command::Labels => commands::labels(&ctx),
        Command::Train { dataset } => {
            let path = dataset.unwrap_or_else(|| ctx.out.join(commands::DATASET));
            commands::train_models(&ctx, &path)
        }
        Command::Episode {
            policy,
            theta,
            r,
            models,
            dataset,
        } => {
            if !theta.is_finite() || !r.is_finite() {
                return Err(CliError::Config("--theta and --r must be finite".into()));
            }
            commands::episode(&ctx, &policy, Pose::new(theta, r), &inputs(models, dataset))
        }
        Command::Eval { models, dataset } => commands::eval(&ctx, &inputs(models, dataset)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("viewnav: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
