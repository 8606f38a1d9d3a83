mod commands;
mod failure;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "latent-chain", version, about = "Simulate, fit and inspect HMMs, linear Gaussian SSMs and discretized SSMs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a sequence from an HMM or LG-SSM model file.
    Simulate(SimulateArgs),
    /// Fit an HMM or LG-SSM by EM.
    Fit(FitArgs),
    /// Posterior marginals (HMM) or smoothed moments (LG-SSM).
    Infer(InferArgs),
    /// Discretize a continuous-time SSM.
    Discretize(DiscretizeArgs),
    /// Compare fast inference against brute-force enumeration / exact conditioning.
    Check(CheckArgs),
    /// Fit both probabilistic families to the same data and print the capability matrix.
    Compare(CompareArgs),
    /// Export the convolution kernel of a discrete SSM.
    Kernel(KernelArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub length: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Hmm,
    Lgssm,
}

#[derive(Args, Debug, Serialize, Clone)]
pub struct EmFlags {
    /// JSON file with any of max_iters, rel_tol, min_variance_floor, seed.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
    #[arg(long)]
    pub min_variance_floor: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Serialize)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub family: Family,
    /// Sequence CSV; repeat for several sequences.
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    /// Initial model file, or `auto`.
    #[arg(long, default_value = "auto")]
    pub model: String,
    /// Number of hidden states for an `auto` HMM.
    #[arg(long)]
    pub states: Option<usize>,
    /// Latent dimension for an `auto` LG-SSM.
    #[arg(long)]
    pub dim: Option<usize>,
    #[command(flatten)]
    pub em: EmFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Marginals,
    Moments,
}

#[derive(Args, Debug, Serialize)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults to `marginals` for HMMs and `moments` for LG-SSMs.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Zoh,
    Bilinear,
}

impl From<Rule> for latent_chain::model::DiscretizationRule {
    fn from(r: Rule) -> Self {
        match r {
            Rule::Zoh => Self::Zoh,
            Rule::Bilinear => Self::Bilinear,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct DiscretizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dt: f64,
    #[arg(long, value_enum, default_value_t = Rule::Zoh)]
    pub rule: Rule,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct CheckArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = latent_chain::check::CHECK_TOL)]
    pub tol: f64,
    /// JSON report destination.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct CompareArgs {
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long, alias = "hmm-states", default_value_t = 2)]
    pub states: usize,
    #[arg(long, alias = "lgssm-dim", default_value_t = 1)]
    pub dim: usize,
    #[command(flatten)]
    pub em: EmFlags,
    /// JSON report destination; the text report goes to stdout.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct KernelArgs {
    /// Discrete SSM, or a continuous SSM together with `--dt`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub length: usize,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, value_enum, default_value_t = Rule::Zoh)]
    pub rule: Rule,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("LATENT_CHAIN_LOG"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result: Result<(), Failure> = match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Fit(a) => commands::fit(a),
        Command::Infer(a) => commands::infer(a),
        Command::Discretize(a) => commands::discretize(a),
        Command::Check(a) => commands::check(a),
        Command::Compare(a) => commands::compare(a),
        Command::Kernel(a) => commands::kernel(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
