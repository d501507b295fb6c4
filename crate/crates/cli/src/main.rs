//! `lprs` — learned LiDAR point cloud codec.
//!
//! Subcommands cover the whole pipeline: synthesize scans, train a model,
//! compress/decompress, evaluate metrics, and run ablation sweeps.
//! Verbosity is controlled by the LPRS_LOG environment variable
//! (error/warn/info/debug); progress goes to stderr, results to stdout and
//! output files.

mod commands;
mod config_file;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use commands::Overrides;

/// Exit codes: 1 runtime, 2 i/o, 3 config, 4 format, 5 model mismatch.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    ModelMismatch(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Io(_) => 2,
            CliError::Config(_) => 3,
            CliError::Format(_) => 4,
            CliError::ModelMismatch(_) => 5,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "lprs",
    version,
    about = "Learned LiDAR point cloud compression",
    propagate_version = true
)]
struct Cli {
    /// Worker threads for patch coding; 1 guarantees determinism.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct OverrideArgs {
    /// Override the training/partition seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Sampler: learnable, mean, or random.
    #[arg(long)]
    sampler: Option<String>,
    /// Candidate expansion in the decoder: on or off.
    #[arg(long)]
    expansion: Option<String>,
    /// Patch size as ROWSxCOLS, e.g. 4x8.
    #[arg(long, value_name = "RxC")]
    patch_size: Option<String>,
    /// Rate coefficient of the training objective.
    #[arg(long)]
    lambda: Option<f64>,
}

impl OverrideArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            sampler: self.sampler.clone(),
            expansion: self.expansion.clone(),
            patch_size: self.patch_size.clone(),
            lambda: self.lambda,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a codec on synthetic scenes and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path to write.
        #[arg(long, visible_alias = "out")]
        output: PathBuf,
        /// Loss trace CSV (default: <output>.loss.csv).
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Compress a KITTI-style .bin scan into a bitstream.
    Compress {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input scan (.bin).
        #[arg(long)]
        input: PathBuf,
        /// Output bitstream file.
        #[arg(long, visible_alias = "out")]
        output: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Decompress a bitstream into an ASCII PLY cloud.
    Decompress {
        /// Input bitstream file.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output cloud (.ply).
        #[arg(long, visible_alias = "out")]
        output: PathBuf,
    },
    /// Metrics for a reconstruction against the original scan.
    Evaluate {
        /// Original scan (.bin).
        #[arg(long)]
        input: PathBuf,
        /// Reconstructed cloud (.ply).
        #[arg(long)]
        reconstructed: PathBuf,
        /// Bitstream the reconstruction came from.
        #[arg(long)]
        bitstream: PathBuf,
        /// Metric report CSV (also printed to stdout).
        #[arg(long, visible_alias = "out")]
        output: Option<PathBuf>,
    },
    /// Train and evaluate sampler/expansion ablation arms.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the table, checkpoints, and traces.
        #[arg(long, visible_alias = "out")]
        output: PathBuf,
        /// Comma-separated sampler arms.
        #[arg(long, default_value = "learnable,mean,random")]
        samplers: String,
        /// Comma-separated expansion arms (on, off).
        #[arg(long, default_value = "on,off")]
        expansions: String,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Generate synthetic KITTI-format scans.
    Synth {
        /// Scene configuration (the [scene] and [grid] sections are used).
        #[arg(long, visible_alias = "spec")]
        config: PathBuf,
        /// Output directory for NNNNNN.bin scans.
        #[arg(long, visible_alias = "out")]
        output: PathBuf,
        /// Number of scans (default: scene.scans from the config).
        #[arg(long)]
        count: Option<usize>,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
        .map_err(|e| CliError::Runtime(format!("thread pool: {}", e)))?;
    match &cli.command {
        Command::Train {
            config,
            output,
            trace,
            overrides,
        } => commands::cmd_train(config, output, trace.as_deref(), &overrides.overrides()),
        Command::Compress {
            config,
            checkpoint,
            input,
            output,
            overrides,
        } => commands::cmd_compress(config, checkpoint, input, output, &overrides.overrides()),
        Command::Decompress {
            input,
            checkpoint,
            output,
        } => commands::cmd_decompress(input, checkpoint, output),
        Command::Evaluate {
            input,
            reconstructed,
            bitstream,
            output,
        } => commands::cmd_evaluate(input, reconstructed, bitstream, output.as_deref()),
        Command::Ablate {
            config,
            output,
            samplers,
            expansions,
            overrides,
        } => commands::cmd_ablate(config, output, samplers, expansions, &overrides.overrides()),
        Command::Synth {
            config,
            output,
            count,
            overrides,
        } => commands::cmd_synth(config, output, *count, &overrides.overrides()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LPRS_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code())
        }
    }
}
