use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "crpd",
    version,
    about = "Cressie-Read power-divergence moment estimation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate θ at a fixed power γ.
    Estimate(EstimateArgs),
    /// Select γ by K-fold cross-validation and refit on the full sample.
    Crossval(CrossvalArgs),
    /// Monte Carlo study of the three-moment location-scale model.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    /// θ = (μ, σ²); moments x−μ, (x−μ)²−σ², (x−μ)³. Outcome column `x`.
    CentralMoments,
    /// θ = μ; moments x−μ, (x−μ)·days. Outcome column `mpd`.
    InstrumentedMean,
    /// θ = μ; single moment x−μ. Outcome column `x`.
    MeanOnly,
    /// Recipe given by --moments.
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossKind {
    MomentInstability,
    PredictionMse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DgpKind {
    Normal,
    T,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output file; standard output when absent. Companion tables are
    /// written next to it as `<stem>_<table>.csv`.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = ModelKind::CentralMoments)]
    pub model: ModelKind,
    /// Outcome column, overriding the model's default.
    #[arg(long)]
    pub outcome: Option<String>,
    /// Moment recipe for `--model custom`: comma-separated terms from
    /// `level`, `square`, `cube`, `instrument:<column>`.
    #[arg(long, value_delimiter = ',')]
    pub moments: Vec<String>,
    /// Search box per parameter, `lo:hi[,lo:hi]`.
    #[arg(long, allow_hyphen_values = true)]
    pub bounds: Option<String>,
    /// Odd number of grid points per dimension.
    #[arg(long, default_value_t = 41)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 3)]
    pub refine_rounds: usize,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.95)]
    pub ci_level: f64,
    /// Include the full weight vector.
    #[arg(long)]
    pub weights: bool,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CrossvalArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// γ grid as `lo:hi:step`, or a single value.
    #[arg(long, allow_hyphen_values = true, default_value = "-2:2:0.05")]
    pub grid: String,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, value_enum, default_value_t = LossKind::MomentInstability)]
    pub loss: LossKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Assign folds in row order instead of after a seeded shuffle.
    #[arg(long)]
    pub no_shuffle: bool,
    #[arg(long, default_value_t = 0.95)]
    pub ci_level: f64,
    /// Refuse grids longer than this.
    #[arg(long, default_value_t = 1001)]
    pub max_grid_points: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_value = "normal")]
    pub dgp: Vec<DgpKind>,
    /// Degrees of freedom for `--dgp t`.
    #[arg(long, default_value_t = 5.0)]
    pub df: f64,
    /// Sample sizes, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "25,50,100")]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, allow_hyphen_values = true, default_value = "-1:1:0.25")]
    pub grid: String,
    #[arg(long, default_value_t = 0.95)]
    pub ci_level: f64,
    #[arg(long, default_value_t = 41)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 3)]
    pub refine_rounds: usize,
    #[command(flatten)]
    pub out: OutputArgs,
}
