//! Single executable driving the engine: group inspection, equivariance
//! verification, synthetic data generation, training, FROC evaluation, and
//! the compute-parity benchmark.
//!
//! Exit codes: 0 success, 1 usage/config/input errors, 2 equivariance
//! violation, 3 non-finite training loss. Every failure prints one
//! `octoconv: error: ...` line to stderr.

mod commands;
mod runconfig;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "octoconv", version, about = "Group-equivariant 3D convolution workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Master seed; OCTOCONV_SEED overrides the default, the flag wins.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for generated artifacts.
    #[arg(long, global = true, default_value = "out")]
    output_dir: PathBuf,

    /// Output flavor for reports.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,

    /// Worker-thread cap; OCTOCONV_THREADS overrides the default, the flag wins.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
    #[value(name = "json-lines")]
    JsonLines,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect the symmetry groups.
    Groups {
        #[command(subcommand)]
        action: GroupsAction,
    },
    /// Verify layer equivariance for one group, exhaustively over elements.
    CheckEquivariance(CheckArgs),
    /// Generate a synthetic dataset family on disk.
    Datagen(DatagenArgs),
    /// Train one model and write checkpoint, loss curve, and predictions.
    Train(TrainArgs),
    /// Score candidates against a reference (FROC).
    Evaluate(EvaluateArgs),
    /// Time a group convolution against an equally-sized plain convolution.
    Bench(BenchArgs),
}

#[derive(Subcommand)]
enum GroupsAction {
    /// Print element matrices, the Cayley table, and the channel permutations.
    Inspect {
        /// trivial | d4 | d4h | o | oh
        name: String,
        /// Also dump the 3x3x3 voxel permutation of every element.
        #[arg(long)]
        voxel_action: bool,
    },
}

#[derive(Args)]
pub struct CheckArgs {
    /// trivial | d4 | d4h | o | oh
    #[arg(long)]
    group: String,
    /// Stack depth to verify (1..=3).
    #[arg(long, default_value_t = 3)]
    depth: usize,
    /// Random float trials per element.
    #[arg(long, default_value_t = 2)]
    trials: usize,
    /// Max-abs tolerance for float inputs (integer inputs must be exact).
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f32,
    /// Testing hook: corrupt the channel permutation the checker expects,
    /// which must make verification fail with exit code 2.
    #[arg(long, hide = true)]
    corrupt_rho: bool,
}

#[derive(Args)]
pub struct DatagenArgs {
    /// desk | paper-shape
    #[arg(long, default_value = "desk")]
    profile: String,
    /// Training subset sizes, comma-separated; defaults to the profile's.
    #[arg(long)]
    sizes: Option<String>,
    /// Validation set size; defaults to the profile's.
    #[arg(long)]
    val_size: Option<usize>,
    /// Test set size; defaults to the profile's.
    #[arg(long)]
    test_size: Option<usize>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// trivial | d4 | d4h | o | oh
    #[arg(long)]
    group: Option<String>,
    /// Training subset size.
    #[arg(long)]
    train_size: Option<usize>,
    /// desk | paper-shape
    #[arg(long, default_value = "desk")]
    profile: String,
    /// Key = value settings file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Generate the dataset in memory instead of reading --data-dir.
    #[arg(long)]
    datagen_inline: bool,
    /// Dataset directory written by `datagen`.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f32>,
    /// Disable the augmentation scheme.
    #[arg(long)]
    no_augment: bool,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Candidate CSV: scan_id,x_mm,y_mm,z_mm,probability
    #[arg(long)]
    candidates: PathBuf,
    /// Reference CSV: scan_id,x_mm,y_mm,z_mm,diameter_mm,relevance,malignant
    #[arg(long)]
    reference: PathBuf,
    /// Top-n values for the malignancy sensitivity count.
    #[arg(long, default_value = "100,150,250")]
    top_n: String,
}

#[derive(Args)]
pub struct BenchArgs {
    /// trivial | d4 | d4h | o | oh
    #[arg(long, default_value = "o")]
    group: String,
    #[arg(long, default_value_t = 2)]
    batch: usize,
    #[arg(long, default_value_t = 2)]
    n_in: usize,
    #[arg(long, default_value_t = 2)]
    n_out: usize,
    /// Spatial extent as d,h,w.
    #[arg(long, default_value = "6,24,24")]
    spatial: String,
    #[arg(long, default_value_t = 5)]
    reps: usize,
}

/// Error kind decides the process exit code.
pub enum CliError {
    Usage(String),
    EquivarianceViolation(String),
    NonFiniteLoss(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::EquivarianceViolation(_) => 2,
            CliError::NonFiniteLoss(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::EquivarianceViolation(m) | CliError::NonFiniteLoss(m) => m,
        }
    }
}

impl From<octoconv_core::CoreError> for CliError {
    fn from(e: octoconv_core::CoreError) -> Self {
        match e {
            octoconv_core::CoreError::NonFiniteLoss { .. } => CliError::NonFiniteLoss(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

fn env_u64(name: &str) -> Option<u64> {
    std::env::var(name).ok().and_then(|v| v.parse().ok())
}

fn env_usize(name: &str) -> Option<usize> {
    std::env::var(name).ok().and_then(|v| v.parse().ok())
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let threads = cli.threads.or_else(|| env_usize("OCTOCONV_THREADS"));
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("octoconv: error: could not configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let seed = cli.seed.or_else(|| env_u64("OCTOCONV_SEED")).unwrap_or(0);

    let ctx = commands::Context {
        seed,
        output_dir: cli.output_dir.clone(),
        format: cli.format,
    };
    let result = match &cli.command {
        Command::Groups {
            action: GroupsAction::Inspect { name, voxel_action },
        } => commands::groups_inspect(&ctx, name, *voxel_action),
        Command::CheckEquivariance(args) => commands::check_equivariance(&ctx, args),
        Command::Datagen(args) => commands::datagen(&ctx, args),
        Command::Train(args) => commands::train(&ctx, args),
        Command::Evaluate(args) => commands::evaluate(&ctx, args),
        Command::Bench(args) => commands::bench(&ctx, args),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("octoconv: error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
