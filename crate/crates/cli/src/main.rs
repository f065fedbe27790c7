//! `scorewave`: distortion corpora, toy score-model training, diffusion
//! enhancement, evaluation and speed-quality sweeps.
//!
//! Exit codes: 0 success, 1 unexpected failure, 2 configuration or usage
//! error, 3 I/O or file-format error, 4 numeric failure (NaN/inf, undefined
//! metric).

mod config;
mod distort;
mod enhance;
mod eval;
mod io;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ConfigError, ToolkitConfig};
use scorewave::error::ErrorCategory;

#[derive(Debug, Parser)]
#[command(name = "scorewave", version, about)]
struct Cli {
    /// Master seed; overrides `seed` from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-file and per-cell parallelism (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a clean/distorted paired corpus from a manifest of WAV files.
    Distort(distort::Args),
    /// Train a toy score network and write a checkpoint.
    Train(train::Args),
    /// Enhance a WAV file window by window with diffusion sampling.
    Enhance(enhance::EnhanceArgs),
    /// Score estimates against references.
    Eval(eval::Args),
    /// Real-time factor and quality over a grid of step counts and epsilons.
    Sweep(enhance::SweepArgs),
    /// Draw samples from the 1-D prior through the sampler.
    SamplePrior(enhance::SampleArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = ToolkitConfig::load(cli.config.as_deref(), cli.seed)?;
    if cli.print_config {
        print!("{}", toml::to_string(&cfg)?);
        return Ok(());
    }
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(ConfigError("--jobs must be >= 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()?;
    }
    let Some(command) = cli.command else {
        return Err(ConfigError("a subcommand is required (see --help)".into()).into());
    };
    match command {
        Command::Distort(a) => distort::run(&cfg, a),
        Command::Train(a) => train::run(&cfg, a),
        Command::Enhance(a) => enhance::enhance(&cfg, a),
        Command::Eval(a) => eval::run(&cfg, a),
        Command::Sweep(a) => enhance::sweep(&cfg, a),
        Command::SamplePrior(a) => enhance::sample_prior(&cfg, a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<scorewave::Error>() {
            return match e.category() {
                ErrorCategory::Config => 2,
                ErrorCategory::Io => 3,
                ErrorCategory::Numeric => 4,
            };
        }
        if cause.is::<ConfigError>() || cause.is::<toml::ser::Error>() {
            return 2;
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
