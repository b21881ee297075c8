mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, CommandFactory, Parser, Subcommand};
use mhmm::em::InitStrategy;
use mhmm::simulate::{Case, Missingness};
use mhmm::EmConfig;

/// Mixtures of hidden Markov models with zero-inflated gamma emissions.
#[derive(Debug, Parser)]
#[command(name = "mhmm", version)]
struct Cli {
    /// Worker threads (default: one per core)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Flat `key = value` file of flags for the subcommand; command-line
    /// flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a dataset from a benchmark case or a model file
    Simulate(SimulateArgs),
    /// Fit a model with K classes and M states
    Fit(FitArgs),
    /// Fit a range of K and compare BIC and ICL
    Select(SelectArgs),
    /// MAP class, Viterbi states and state posteriors per time point
    Decode(DecodeArgs),
    /// Marginal state cutoffs and long-run time shares of a model
    Cutoffs(CutoffsArgs),
    /// Simulation experiments
    #[command(subcommand)]
    Experiment(Experiment),
}

#[derive(Debug, Subcommand)]
enum Experiment {
    /// Classification of single subjects under true parameters, by length
    Misclassification(MisclassificationArgs),
    /// Estimation accuracy by sample size, length and missingness
    Convergence(ConvergenceArgs),
}

#[derive(Debug, Clone, Args)]
struct EmArgs {
    #[arg(long, default_value_t = 50)]
    restarts: usize,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Stop when the relative loglik change falls below this
    #[arg(long, default_value_t = 1e-8)]
    rel_tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tie each initial law to the stationary law of its chain
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    stationary_init: bool,
    #[arg(long, default_value_t = 1e-6)]
    min_state_occupancy: f64,
    /// Starting points: random | subject_clusters
    #[arg(long, default_value_t = InitStrategy::Random)]
    init: InitStrategy,
}

impl EmArgs {
    fn config(&self) -> EmConfig {
        EmConfig {
            max_iter: self.max_iter,
            rel_tol: self.rel_tol,
            restarts: self.restarts,
            seed: self.seed,
            stationary_init: self.stationary_init,
            min_state_occupancy: self.min_state_occupancy,
            init: self.init,
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// hard | medium_hard | medium_easy | easy
    #[arg(long, default_value_t = Case::MediumHard, conflicts_with = "model")]
    case: Case,
    /// Model JSON to simulate from instead of a benchmark case
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Observations at t = 0..=T
    #[arg(long = "t", default_value_t = 500)]
    t_len: usize,
    /// none | mcar1 | mcar2 | mnar
    #[arg(long, default_value_t = Missingness::None)]
    missingness: Missingness,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Long CSV with columns subject_id,t,value
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    m: usize,
    #[command(flatten)]
    em: EmArgs,
    /// Gaps shorter than this are listed as short in the diagnostics
    #[arg(long, default_value_t = 1)]
    min_gap: usize,
    /// Total-variation target of the gap check
    #[arg(long, default_value_t = 0.01)]
    eta: f64,
    /// CSV subject_id,class of true classes; adds an ARI to the report
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1)]
    k_min: usize,
    #[arg(long, default_value_t = 4)]
    k_max: usize,
    #[arg(long)]
    m: usize,
    #[command(flatten)]
    em: EmArgs,
    #[arg(long, default_value_t = 1)]
    min_gap: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 1)]
    min_gap: usize,
    /// Output CSV file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CutoffsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MisclassificationArgs {
    /// Benchmark cases, comma separated
    #[arg(long, value_delimiter = ',', default_value = "hard,medium_hard,medium_easy,easy")]
    case: Vec<Case>,
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,40,50,60,70,80,90,100")]
    t_grid: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ConvergenceArgs {
    #[arg(long, default_value_t = Case::MediumHard)]
    case: Case,
    /// Sample sizes, comma separated
    #[arg(long, value_delimiter = ',', default_value = "10,100")]
    n: Vec<usize>,
    /// Lengths, comma separated
    #[arg(long = "t", value_delimiter = ',', default_value = "100,500")]
    t_len: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "none")]
    missingness: Vec<Missingness>,
    #[arg(long, default_value_t = 50)]
    replicates: usize,
    #[command(flatten)]
    em: EmArgs,
    /// Output CSV file
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    let args = config::expand(std::env::args_os().collect(), &Cli::command())?;
    let cli = Cli::parse_from(args);
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Select(a) => commands::select(&a),
        Command::Decode(a) => commands::decode(&a),
        Command::Cutoffs(a) => commands::cutoffs(&a),
        Command::Experiment(Experiment::Misclassification(a)) => commands::misclassification(&a),
        Command::Experiment(Experiment::Convergence(a)) => commands::convergence(&a),
    }
}
