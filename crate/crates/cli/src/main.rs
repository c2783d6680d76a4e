use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod manifest;

/// Exit status 1 for computational failures, 2 for bad usage or input.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub msg: String,
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure { code: 2, msg: msg.into() }
    }

    pub fn compute(msg: impl Into<String>) -> Self {
        Failure { code: 1, msg: msg.into() }
    }
}

impl From<fer_forge_core::Error> for Failure {
    fn from(e: fer_forge_core::Error) -> Self {
        Failure { code: if e.is_input_error() { 2 } else { 1 }, msg: e.to_string() }
    }
}

#[derive(Parser)]
#[command(name = "fer-forge", version, about = "Facial expression recognition: training, evaluation, detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its model file, epoch log and confusion matrix.
    Train(RunArgs),
    /// Run a grid of optimizer/batch/epoch cells (the built-in optimizer grid by default).
    Sweep(RunArgs),
    /// Evaluate a saved model on the test split of a dataset.
    Eval(EvalArgs),
    /// Classify one pre-cropped face image.
    Predict(PredictArgs),
    /// Find faces with a Haar cascade, optionally classifying each.
    Detect(DetectArgs),
    /// Finite-difference check of every backward pass at toy size.
    Gradcheck(GradcheckArgs),
    /// Class counts of a dataset.
    Histogram(HistogramArgs),
}

#[derive(Args, Debug, Default)]
pub struct RunArgs {
    /// Flat `key = value` manifest; flags override its values.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// tree, ffnn, simple_cnn or proposed_cnn (comma-separated for sweep).
    #[arg(long)]
    pub model: Option<String>,
    /// FER-2013 style CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// sgd, rmsprop or adam.
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Re-evaluate the training set after every epoch instead of using the running estimate.
    #[arg(long)]
    pub strict_epoch_eval: bool,
    #[arg(long)]
    pub no_early_stop: bool,
    /// Accuracy series that drives early stopping: train or test.
    #[arg(long)]
    pub monitor: Option<String>,
    #[arg(long)]
    pub min_samples_split: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// Features drawn per tree node.
    #[arg(long)]
    pub feature_subsample: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Model file (`.femo`) or tree text file.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Directory for confusion-matrix CSVs.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// PGM (P5) or PPM (P6) face image.
    #[arg(long)]
    pub image: PathBuf,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    /// JSON cascade file.
    #[arg(long)]
    pub cascade: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Classify every detection with this model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub min_neighbors: usize,
    #[arg(long, default_value_t = 1.1)]
    pub scale_factor: f64,
    #[arg(long, default_value_t = 0)]
    pub min_size: usize,
    /// CSV output file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// ffnn, simple_cnn, proposed_cnn or all.
    #[arg(long, default_value = "all")]
    pub model: String,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    /// Scale the analytic gradients of checks whose label starts with PREFIX.
    #[arg(long, value_name = "PREFIX:FACTOR", hide = true)]
    pub corrupt: Option<String>,
}

#[derive(Args, Debug)]
pub struct HistogramArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("FER_FORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::usage(format!("FER_FORGE_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::compute(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Detect(a) => commands::detect(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Histogram(a) => commands::histogram(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
