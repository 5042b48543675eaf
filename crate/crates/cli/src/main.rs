use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

mod commands;
mod error;
mod settings;
mod table;

use error::CliError;
use settings::Resolver;

/// Maximum-entropy state estimation experiments.
///
/// Every setting can also come from a `key = value` file given with
/// `--config`; flags win over the file. Each run writes the resolved
/// settings to `<output>.run.cfg`.
#[derive(Parser, Debug)]
#[command(name = "qipnet", version)]
struct Cli {
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for generation and evaluation (default 1).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Roughness profile and the even / beta / flat distributions.
    Profile(ProfileArgs),
    /// Generate a training dataset, or a ground-state measurement CSV.
    Gen(GenArgs),
    /// Train a network on a dataset.
    Train(TrainArgs),
    /// Fidelity report of a trained network on fresh test points.
    Eval(EvalArgs),
    /// Estimate states from one vector or a CSV of vectors.
    Estimate(EstimateArgs),
    /// Compare the network with the iterative and cross-entropy solvers.
    Baseline(BaselineArgs),
    /// Process experimental measurements against optional ground truth.
    Ingest(IngestArgs),
}

/// Operator sets: f1, f2, pauli:<n>, random:<d>,<m>,<seed>, file:<path>.
#[derive(Args, Debug)]
struct ProfileArgs {
    #[arg(long)]
    opset: Option<String>,
    /// Number of β intervals (i, i+1] [default: 100]
    #[arg(long)]
    intervals: Option<usize>,
    /// Samples per interval [default: 1000]
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output JSON; the CSV goes next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    opset: Option<String>,
    /// even, beta or flat [default: flat]
    #[arg(long)]
    dist: Option<String>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    intervals: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    /// Seed of the roughness profile behind beta / flat [default: 1]
    #[arg(long)]
    profile_seed: Option<u64>,
    /// none, additive:<σ>, mult:<σ,...> or mult-mean:<r,...>
    #[arg(long)]
    noise: Option<String>,
    /// Write unique ground states as a c1..cm,a1..am CSV instead.
    #[arg(long)]
    ground_states: Option<bool>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Hidden layer widths [default: 100,100]
    #[arg(long)]
    hidden: Option<String>,
    /// relu or tanh [default: relu]
    #[arg(long)]
    activation: Option<String>,
    /// [default: 40000]
    #[arg(long)]
    batch_size: Option<usize>,
    /// [default: 300]
    #[arg(long)]
    epochs: Option<usize>,
    /// [default: 0.001]
    #[arg(long)]
    lr: Option<f64>,
    /// Learning rate at the last epoch relative to --lr [default: 1]
    #[arg(long)]
    final_lr_fraction: Option<f64>,
    /// mae or mse [default: mae]
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    shuffle_seed: Option<u64>,
    /// Held-out fraction for a validation loss [default: 0]
    #[arg(long)]
    holdout: Option<f64>,
    /// Checkpoint file, rewritten every --checkpoint-every epochs.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Continue from a checkpoint written with the same data and settings.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    opset: Option<String>,
    /// Uniform-β test points [default: 1000]
    #[arg(long)]
    count: Option<usize>,
    /// [default: 100]
    #[arg(long)]
    beta_max: Option<usize>,
    /// Test seed [default: 1]
    #[arg(long)]
    seed: Option<u64>,
    /// Seed the training data was generated with; must differ from --seed.
    #[arg(long)]
    train_seed: Option<u64>,
    /// Evaluate on this dataset instead of fresh points.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Intervals for the boxplot data, 0 to skip [default: 100]
    #[arg(long)]
    intervals: Option<usize>,
    /// [default: 50]
    #[arg(long)]
    per_interval: Option<usize>,
    /// Intervals per boxplot [default: 5]
    #[arg(long)]
    group: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    opset: Option<String>,
    /// Comma-separated expectation values.
    #[arg(long, allow_hyphen_values = true)]
    c: Option<String>,
    /// CSV with columns c1..cm.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// l2 or linf [default: l2]
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[arg(long)]
    opset: Option<String>,
    /// [default: 20]
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// [default: 10]
    #[arg(long)]
    beta_max: Option<usize>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Comma-separated subset of iterative,qbm [default: iterative,qbm]
    #[arg(long)]
    solvers: Option<String>,
    #[arg(long)]
    error_bound: Option<f64>,
    #[arg(long)]
    max_sweeps: Option<usize>,
    #[arg(long)]
    damping: Option<f64>,
    #[arg(long)]
    qbm_lr: Option<f64>,
    #[arg(long)]
    qbm_iterations: Option<usize>,
    #[arg(long)]
    fd_step: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    opset: Option<String>,
    /// CSV with c1..cm and optionally a1..am or theta1..thetam.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// JSON array of reference density matrices, one per row.
    #[arg(long)]
    states: Option<PathBuf>,
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut settings = Resolver::new(cli.config.as_deref())?;
    let workers = settings.get("workers", cli.workers, 1usize)?;
    if workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    // Fails only if a pool already exists, which cannot happen here.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    match cli.command {
        Command::Profile(a) => commands::profile(a, &mut settings),
        Command::Gen(a) => commands::gen(a, &mut settings),
        Command::Train(a) => commands::train(a, &mut settings, workers),
        Command::Eval(a) => commands::eval(a, &mut settings),
        Command::Estimate(a) => commands::estimate(a, &mut settings),
        Command::Baseline(a) => commands::baseline(a, &mut settings),
        Command::Ingest(a) => commands::ingest(a, &mut settings),
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
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
