//! `itb`: generate datasets, train reference models, attribute, evaluate and
//! rank attribution methods.

mod commands;
mod manifest;
mod scorer;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use itb_core::Error;

#[derive(Parser, Debug)]
#[command(name = "itb", version, about = "Interpretability benchmark for time-series classifiers")]
pub struct Cli {
    /// Root seed for every random stream.
    #[arg(long, global = true, env = "ITB_SEED", default_value_t = 0)]
    pub seed: u64,

    /// JSON config file; its values override command-line flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads for generation, attribution and evaluation
    /// (default: available cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate an attractor dataset container.
    Gen(GenArgs),
    /// Train a built-in classifier on a dataset's training split.
    Train(TrainArgs),
    /// Compute relevance maps, one container per method.
    Attribute(AttributeArgs),
    /// Occlusion-based evaluation of attribution methods.
    Evaluate(EvaluateArgs),
    /// Merge evaluation reports into ranking and curve tables.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, default_value = "sd1")]
    pub variant: String,
    #[arg(long, default_value_t = 500)]
    pub n_per_class: usize,
    /// Train/validation/test fractions.
    #[arg(long, value_delimiter = ',', default_values_t = [0.7, 0.15, 0.15])]
    pub split: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `mlp` or `linear`.
    #[arg(long, default_value = "mlp")]
    pub kind: String,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 200)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
}

#[derive(Args, Debug, Clone)]
pub struct ScorerArgs {
    /// `builtin:<model dir>`, `external:<command>` or `tcp:<host:port>`.
    #[arg(long)]
    pub scorer: String,
    /// Seconds to wait for an external scorer reply.
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
}

#[derive(Args, Debug, Clone)]
pub struct AttributionArgs {
    /// Dataset split to explain.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Explain only the first N samples of the split.
    #[arg(long)]
    pub limit: Option<usize>,
    /// `true` or `predicted` class.
    #[arg(long, default_value = "true")]
    pub target: String,
    #[arg(long, default_value_t = 25)]
    pub n_permutations: usize,
    #[arg(long, default_value_t = 2048)]
    pub n_coalitions: usize,
    #[arg(long, default_value_t = 50)]
    pub ig_steps: usize,
    /// `zeros` or `normal`.
    #[arg(long, default_value = "zeros")]
    pub baseline: String,
    /// Treat all channels of a time step as one player.
    #[arg(long)]
    pub group_time_steps: bool,
    /// Use central differences when the scorer has no gradients.
    #[arg(long)]
    pub finite_difference: bool,
}

#[derive(Args, Debug)]
pub struct AttributeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    /// Comma-separated: shapley, kernelshap, saliency, ig, random.
    #[arg(long = "methods", alias = "method", value_delimiter = ',', required = true)]
    pub methods: Vec<String>,
    #[command(flatten)]
    pub attribution: AttributionArgs,
    /// One sub-directory per method is written here.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    pub methods: Vec<String>,
    /// Directory holding `<method>/` relevance containers; missing methods
    /// are attributed on the fly.
    #[arg(long)]
    pub relevance: Option<PathBuf>,
    #[command(flatten)]
    pub attribution: AttributionArgs,
    /// Comma-separated: normal, permute.
    #[arg(long, value_delimiter = ',', default_value = "normal")]
    pub occlusion: Vec<String>,
    /// Also occlude random sets matched in size to each method's masks.
    #[arg(long)]
    pub random_baseline: bool,
    /// `correct` (correctly classified only) or `all`.
    #[arg(long, default_value = "correct")]
    pub samples: String,
    /// `per-class` or `global`.
    #[arg(long, default_value = "per-class")]
    pub expectancy: String,
    #[arg(long, value_delimiter = ',')]
    pub quantiles: Option<Vec<f64>>,
    /// Dataset label in the report (default: the dataset variant or
    /// directory name).
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Evaluation output directories to merge.
    #[arg(long = "inputs", value_delimiter = ',', num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    /// `csv` writes every table; `json` writes only the merged report.
    #[arg(long, default_value = "csv")]
    pub format: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// Process exit codes.
pub mod exit {
    pub const FAILURE: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const GENERATION: u8 = 3;
    pub const MISMATCH: u8 = 4;
    pub const SCORER: u8 = 5;
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig { .. } | Error::WindowTooLong { .. } | Error::EmptyClassSplit { .. } => exit::CONFIG,
        Error::GenerationFailed { .. } | Error::NonFiniteState { .. } | Error::DegenerateSample { .. } => {
            exit::GENERATION
        }
        Error::ShapeMismatch { .. }
        | Error::FormatVersionMismatch { .. }
        | Error::Manifest { .. }
        | Error::Io { .. }
        | Error::MethodUnsupportedForScorer { .. } => exit::MISMATCH,
        e if e.is_scorer_failure() => exit::SCORER,
        _ => exit::FAILURE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::MethodUnsupportedForScorer { .. }) {
                eprintln!("hint: --finite-difference estimates gradients from scores");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
