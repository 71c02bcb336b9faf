mod commands;
mod failure;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use failure::Failure;

/// Estimates per-account narrative influence from retweet data.
///
/// Exit codes: 0 ok, 2 input error, 3 empty filtered set, 4 convergence
/// failure (outputs are still written), 5 unsupported configuration,
/// 6 singular design.
#[derive(Debug, Parser)]
#[command(name = "narrinf", version)]
struct Cli {
    /// Worker threads for chains and impact evaluation (default: all cores).
    #[arg(long, global = true, env = "NARRINF_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter tweet records to a narrative and build the dataset CSVs.
    Ingest(IngestArgs),
    /// Sample the posterior of the influence model.
    Fit(FitArgs),
    /// Estimate and rank per-account impact from posterior draws.
    Impact(ImpactArgs),
    /// Fisher information and Cramér-Rao bound of the 1-hop design.
    Crlb(CrlbArgs),
    /// Generate a synthetic dataset with known parameters.
    Simulate(SimulateArgs),
    /// Recompute the digests recorded in a run manifest.
    Verify(VerifyArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    /// Tweet records, one JSON object per line.
    #[arg(long)]
    input: PathBuf,
    /// Narrative definition JSON: {"hashtags": [...], "keywords": [...], "case_sensitive": false}.
    #[arg(long)]
    narrative: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// File of source accounts (user id or screen name per line) overriding inference.
    #[arg(long)]
    sources: Option<PathBuf>,
    /// Divide each influence row by its largest weight.
    #[arg(long)]
    normalize_rows: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// Dataset directory written by `ingest` or `simulate`.
    #[arg(long)]
    data: PathBuf,
    /// Number of exposure hops.
    #[arg(long, default_value_t = 1)]
    hops: usize,
    #[arg(long, default_value_t = 4)]
    chains: usize,
    /// Iterations per chain, burn-in included.
    #[arg(long, default_value_t = 5000)]
    iters: usize,
    #[arg(long, default_value_t = 2500)]
    burn: usize,
    #[arg(long, default_value_t = 5)]
    thin: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Target Metropolis acceptance rate during burn-in adaptation.
    #[arg(long, default_value_t = 0.3)]
    target_accept: f64,
    /// Prior JSON overriding the defaults (tau_sd, beta_sd, mu_sd, sigma2_shape, sigma2_scale).
    #[arg(long)]
    priors: Option<PathBuf>,
    /// Exit with code 4 when any split-R̂ exceeds this.
    #[arg(long, default_value_t = 1.2)]
    max_rhat: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ImpactArgs {
    #[arg(long)]
    data: PathBuf,
    /// Posterior CSV written by `fit`.
    #[arg(long)]
    posterior: PathBuf,
    /// Ranked impact CSV.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated vertex ids to evaluate (default: all).
    #[arg(long, value_delimiter = ',')]
    vertices: Option<Vec<String>>,
    /// Also write the account report with columns screen_name,T,TRT,MRT,F,first_time,PR,Impact.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CrlbArgs {
    #[arg(long)]
    data: PathBuf,
    /// Parameter JSON: {"tau", "gamma": [g1], "beta": [b], "mu", "sigma_eps"}.
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Ridge added to the information diagonal before inversion.
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    /// Information below which τ or γ₁ is flagged as weakly identified.
    #[arg(long, default_value_t = narrinf_core::fisher::DEFAULT_WEAK_FLOOR)]
    floor: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Number of accounts.
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 5.0)]
    mean_degree: f64,
    /// Largest edge weight.
    #[arg(long, default_value_t = 3)]
    weight_max: u32,
    /// Number of sources (default: max(1, n/10)).
    #[arg(long)]
    n_sources: Option<usize>,
    /// Parameter JSON (default: τ=1, γ₁=0.5, β=0.3, μ=−0.5, σ_ε=0.1).
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long)]
    manifest: PathBuf,
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::input(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Impact(a) => commands::impact(&a),
        Command::Crlb(a) => commands::crlb(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Verify(a) => commands::verify(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
