mod commands;
mod config;
mod output;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::{ModeName, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("resource guard: {0}")]
    Guard(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("io error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Guard(_) => 3,
            CliError::Invariant(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<tensornet::Error> for CliError {
    fn from(e: tensornet::Error) -> Self {
        use tensornet::Error as E;
        match e {
            E::ResourceGuard(m) => CliError::Guard(m),
            E::Numerical(_) => CliError::Invariant(e.to_string()),
            E::Io(m) => CliError::Io(m),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "tensornet", version, about = "Hermite analysis, population risk, tensor reductions and SGD runs for two-layer networks")]
pub struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Global seed (falls back to TENSORNET_SEED, then 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for independent runs.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Hermite coefficients and Parseval residual of an activation.
    Hermite(HermiteArgs),
    /// Generate a weight ensemble and measure its assumption constants.
    Ensemble(EnsembleArgs),
    /// Population risk, lower-bound certificate and estimation errors.
    Risk(RiskArgs),
    /// Labels from moment tensors, checked against direct evaluation.
    Reduce(ReduceArgs),
    /// Teacher-student SGD runs.
    Sgd(SgdArgs),
    /// Run the property suite and write its artifacts.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct HermiteArgs {
    /// Monomial coefficients a_0,a_1,... of a polynomial activation.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "tanh_beta")]
    pub poly: Option<Vec<f64>>,
    /// Slope of tanh(beta x).
    #[arg(long)]
    pub tanh_beta: Option<f64>,
    /// Truncation degree.
    #[arg(long = "K")]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    /// Also write the moment tensor of this order.
    #[arg(long)]
    pub tensor_order: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RiskArgs {
    #[arg(long)]
    pub teacher_kind: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    /// Student width for a constrained student.
    #[arg(long)]
    pub student_r: Option<usize>,
    /// Build a constrained student at this correlation level.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Use the teacher itself as the student.
    #[arg(long, conflicts_with_all = ["epsilon", "student_file"])]
    pub student_teacher: bool,
    /// Read the student from an ensemble CSV.
    #[arg(long)]
    pub student_file: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "tanh_beta")]
    pub poly: Option<Vec<f64>>,
    #[arg(long)]
    pub tanh_beta: Option<f64>,
    #[arg(long = "K")]
    pub k: Option<usize>,
    /// Also write bound_sweep.csv.
    #[arg(long)]
    pub sweep: bool,
}

#[derive(Debug, Args)]
pub struct ReduceArgs {
    #[arg(long, value_enum)]
    pub mode: Option<ModeName>,
    #[arg(long)]
    pub ell: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub coeffs: Option<Vec<f64>>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub teacher_kind: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub n_inputs: Option<usize>,
    #[arg(long)]
    pub write_tensors: bool,
}

#[derive(Debug, Args)]
pub struct SgdArgs {
    /// Run the learning-curve grid (desk or full).
    #[arg(long)]
    pub scale: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub window: Option<usize>,
    /// raw or width_dim.
    #[arg(long)]
    pub step_scaling: Option<String>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub mc_samples: Option<usize>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let base = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let seed = base.resolve_seed(cli.seed)?;
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {jobs} workers: {e}")))?;
    }
    let ctx = commands::Context::new(&cli, &base, seed);
    match &cli.command {
        Command::Hermite(a) => commands::hermite(&ctx, &base, a),
        Command::Ensemble(a) => commands::ensemble(&ctx, &base, a),
        Command::Risk(a) => commands::risk(&ctx, &base, a),
        Command::Reduce(a) => commands::reduce(&ctx, &base, a),
        Command::Sgd(a) => commands::sgd(&ctx, &base, a),
        Command::Verify(a) => verify::run(&ctx, &base, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tensornet: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
