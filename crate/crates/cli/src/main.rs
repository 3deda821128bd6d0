mod commands;
mod config;
mod error;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Cold-sampling adversarial sequence generation on synthetic tasks.
#[derive(Debug, Parser)]
#[command(name = "coldlab", version)]
struct Cli {
    /// Root directory of every run directory.
    #[arg(long, global = true, env = "COLDLAB_OUTPUT_ROOT", default_value = ".")]
    output_root: PathBuf,

    /// Rollout and Monte Carlo worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,

    /// Overrides the config's root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// TOML run configuration.
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// MLE pretraining of the generator.
    Pretrain(ConfigArg),
    /// Adversarial training from a pretrained checkpoint.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Generator checkpoint; defaults to the run's pretrained one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Rollout sampler, e.g. `mixture(eps=0.9,p=0.95,gamma=0.2)`.
        #[arg(long)]
        sampler: Option<String>,
    },
    /// Exact-enumeration checks of the gradient estimators.
    Verify {
        /// Defaults to the 4+EOS, max_len 4 instance.
        #[arg(long, short)]
        config: Option<PathBuf>,
        /// Print the check names and exit.
        #[arg(long)]
        list: bool,
        /// Largest number of enumerated sequences.
        #[arg(long)]
        budget: Option<u64>,
        /// Multiplies every importance weight (negative control).
        #[arg(long, hide = true)]
        corrupt_is_weight: Option<f64>,
    },
    /// Discriminator probes: `cross-temp` or `prefix-acc`.
    Probe {
        probe: String,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Earlier generator checkpoint for the cross-temperature probe.
        #[arg(long)]
        past: Option<PathBuf>,
    },
    /// Quality-diversity curve over sampling temperatures.
    Curve {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        temps: Option<Vec<f64>>,
        /// Series name in the plot data.
        #[arg(long, default_value = "model")]
        series: String,
    },
    /// Sample sequences to stdout.
    Gen {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, short, default_value_t = 10)]
        n: usize,
        /// Sampler spec; temperature 1 by default.
        #[arg(long, conflicts_with = "beam")]
        sampler: Option<String>,
        /// Beam search of this width instead of sampling.
        #[arg(long)]
        beam: Option<usize>,
    },
    /// `(x, y, series)` triples from curve or training-log CSVs.
    PlotData {
        /// `NAME=PATH` of a curve CSV; repeatable.
        #[arg(long = "curve")]
        curves: Vec<String>,
        /// `NAME=PATH` of a training log; repeatable.
        #[arg(long = "log")]
        logs: Vec<String>,
        /// Training-log column plotted against the epoch.
        #[arg(long, default_value = "oracle_nll")]
        column: String,
        /// Output file; stdout by default.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let ctx = commands::Context { output_root: cli.output_root, workers: cli.workers.max(1), seed: cli.seed };
    let result = match cli.command {
        Command::Pretrain(c) => commands::pretrain(&ctx, &c.config),
        Command::Train { config, checkpoint, epochs, sampler } => {
            commands::train(&ctx, &config.config, checkpoint, epochs, sampler)
        }
        Command::Verify { config, list, budget, corrupt_is_weight } => {
            commands::verify(&ctx, config, list, budget, corrupt_is_weight)
        }
        Command::Probe { probe, config, checkpoint, past } => {
            commands::probe(&ctx, &probe, &config.config, checkpoint, past)
        }
        Command::Curve { config, checkpoint, temps, series } => {
            commands::curve(&ctx, &config.config, checkpoint, temps, &series)
        }
        Command::Gen { config, checkpoint, n, sampler, beam } => {
            commands::gen(&ctx, &config.config, checkpoint, n, sampler, beam)
        }
        Command::PlotData { curves, logs, column, out } => commands::plot_data(&curves, &logs, &column, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
