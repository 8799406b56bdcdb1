use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use wate_core::estimand::Estimand;
use wate_core::estimators::EstimatorKind;
use wate_core::inference::VarianceMethod;
use wate_core::twophase::SchemeKind;

#[derive(Debug, Parser)]
#[command(name = "wate", about = "Weighted average treatment effects from two-phase samples")]
pub struct Cli {
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, env = "WATE_LOG", default_value = "warn")]
    pub log_level: log::LevelFilter,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate treatment effects from a two-phase CSV.
    Estimate(EstimateArgs),
    /// Optimal phase-2 sampling probabilities from per-stratum moments.
    Design(DesignArgs),
    /// Draw a phase-2 sample from a phase-1 CSV.
    Sample(SampleArgs),
    /// True effects of the simulation model from a large reference sample.
    Truth(TruthArgs),
    /// Run a grid of simulation scenarios.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Md,
}

#[derive(Debug, Args)]
pub struct ColumnArgs {
    #[arg(long, default_value = "a")]
    pub treatment: String,
    #[arg(long, default_value = "y")]
    pub outcome: String,
    #[arg(long, default_value = "delta")]
    pub delta: String,
    #[arg(long, default_value = "q")]
    pub q: String,
    /// Phase-1 covariates, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub v: Vec<String>,
    /// Phase-2 covariates, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub w: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long = "in", value_name = "CSV")]
    pub input: PathBuf,
    #[command(flatten)]
    pub columns: ColumnArgs,
    /// Columns defining the sampling strata S.
    #[arg(long, value_delimiter = ',', required = true)]
    pub strata: Vec<String>,
    /// Propensity covariates; defaults to all of --v and --w.
    #[arg(long, value_delimiter = ',')]
    pub ps_covariates: Option<Vec<String>>,
    /// Outcome-model covariates; defaults to all of --v and --w.
    #[arg(long, value_delimiter = ',')]
    pub outcome_covariates: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',', default_value = "siw,eiw,sdr,edr")]
    pub estimator: Vec<EstimatorKind>,
    #[arg(long, value_delimiter = ',', default_value = "ate,att,atc,ato")]
    pub estimand: Vec<Estimand>,
    /// eif or sandwich; by default eif for doubly robust estimators and
    /// sandwich for inverse weighting.
    #[arg(long)]
    pub variance: Option<VarianceMethod>,
    /// Number of delete-a-group jackknife groups for bias correction.
    #[arg(long)]
    pub jackknife: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DesignMethod {
    Neyman,
    Ipsw,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    /// CSV with columns k, p, sigma and optionally xi.
    #[arg(long, value_name = "CSV")]
    pub strata: PathBuf,
    /// Expected overall phase-2 fraction.
    #[arg(long)]
    pub qbar: f64,
    #[arg(long, value_enum, default_value = "neyman")]
    pub method: DesignMethod,
    /// Weight normalizer used for the normalized objective.
    #[arg(long)]
    pub c_w: Option<f64>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long = "in", value_name = "CSV")]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub strata: Vec<String>,
    #[arg(long, value_enum)]
    pub scheme: SchemeArg,
    /// Target phase-2 size, split equally over strata.
    #[arg(long, conflicts_with = "q_file")]
    pub m: Option<usize>,
    /// Poisson sampling probabilities: the stratum columns plus a `q` column.
    #[arg(long, value_name = "CSV")]
    pub q_file: Option<PathBuf>,
    /// Columns blanked on rows left out of phase 2.
    #[arg(long, value_delimiter = ',')]
    pub phase2_columns: Vec<String>,
    #[arg(long, default_value = "delta")]
    pub delta_column: String,
    #[arg(long, default_value = "q")]
    pub q_column: String,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Poisson,
    Srswor,
}

impl From<SchemeArg> for SchemeKind {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Poisson => SchemeKind::Poisson,
            SchemeArg::Srswor => SchemeKind::Srswor,
        }
    }
}

#[derive(Debug, Args)]
pub struct TruthArgs {
    #[arg(long, default_value_t = 10_000_000)]
    pub reference_n: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario grid, TOML or JSON.
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, env = "WATE_THREADS")]
    pub threads: Option<usize>,
    /// Also print the markdown tables to stdout.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}
