use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "kvclt",
    version,
    about = "CLT diagnostics for additive functionals of finite Markov chains",
    after_help = "Exit codes: 0 all verdicts pass, 1 input error, 2 verdict failure.\n\
                  Tolerances: --tol.<name>=value with name in row, mean, ker, grade, A, B, match."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ergodicity, H_{-1} norm, resolvent sweep and sigma^2.
    Analyze(AnalyzeArgs),
    /// Strong, graded and relaxed sector-condition checks.
    Sector(SectorArgs),
    /// Monte Carlo estimate of sigma^2 and martingale checks.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON model file or `builtin:<name>` (2state(a,b), 3cycle, ladder(N,profile), random(n,seed)).
    pub model: Option<String>,
    /// Read the generator from a CSV file instead (needs --observable).
    #[arg(long, value_name = "PATH")]
    pub matrix_csv: Option<PathBuf>,
    /// Override the observable: comma-separated values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, value_name = "F1,F2,...")]
    pub observable: Option<Vec<f64>>,
    /// Subtract the pi-mean from the observable instead of rejecting it.
    #[arg(long)]
    pub project: bool,
    /// Write the report here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_max: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub lambda_min: f64,
    #[arg(long, default_value_t = 10.0)]
    pub lambda_ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Tolerance override `name=value` (also spelled `--tol.name=value`).
    #[arg(long = "tol", value_name = "NAME=VALUE")]
    pub tol: Vec<String>,
    /// Include the model file in the report.
    #[arg(long)]
    pub echo_model: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SectorArgs {
    #[command(flatten)]
    pub common: Common,
    /// Strong sector condition constant and sampled pairwise check.
    #[arg(long)]
    pub ssc: bool,
    /// Graded sector condition with bounds `power:C,kappa,beta` or
    /// `seq:d=<seq>;c=<seq>` where <seq> is `const:x`, `pow:p` or `list:x1|x2|...`.
    #[arg(long, value_name = "BOUNDS")]
    pub gsc: Option<String>,
    /// Relaxed sector condition: B_lambda -> B, skew certificate, K_lambda -> K.
    #[arg(long)]
    pub rsc: bool,
    /// Random pairs for the sampled SSC check.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// Random test vectors for the RSC convergence check.
    #[arg(long, default_value_t = 20)]
    pub test_vectors: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Time horizon N.
    #[arg(long, default_value_t = 1e4)]
    pub horizon: f64,
    /// Number of independent trajectories.
    #[arg(long, default_value_t = 10_000)]
    pub trajectories: usize,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Write per-trajectory values (index, additive functional, M(N)) as CSV.
    #[arg(long, value_name = "PATH")]
    pub values_csv: Option<PathBuf>,
    /// Also report N^{-1} E[(int f - M(N))^2] at N/100, N/10 and N.
    #[arg(long)]
    pub profile: bool,
}

/// Rewrites `--tol.<name>=v` and `--tol.<name> v` into `--tol <name>=v`.
pub fn normalize_args(args: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut out = Vec::new();
    let mut iter = args.into_iter();
    while let Some(a) = iter.next() {
        match a.strip_prefix("--tol.") {
            Some(rest) if rest.contains('=') => {
                out.push("--tol".into());
                out.push(rest.into());
            }
            Some(rest) => {
                out.push("--tol".into());
                let value = iter.next().unwrap_or_default();
                out.push(format!("{rest}={value}"));
            }
            None => out.push(a),
        }
    }
    out
}
