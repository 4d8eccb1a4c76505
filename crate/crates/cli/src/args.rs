use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use panelshift::dgp::Position;
use panelshift::experiment::{Layout, Profile};
use panelshift::{IntervalBasis, Regressors, Statistic};

#[derive(Debug, Parser)]
#[command(name = "panelshift", version, about = "Structural change and spatial heterogeneity tests for panel data")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic panel and its ground truth.
    Simulate(SimulateArgs),
    /// Test for a change in the AR(1) coefficient over time.
    TestStructural(StructuralArgs),
    /// Test for a neighborhood effect that varies across time.
    TestSpatial(SpatialArgs),
    /// Run both tests with backfitting.
    TestJoint(JointArgs),
    /// Run a Monte Carlo grid described by a TOML file.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML or JSON generator configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output panel CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Output ground-truth JSON; defaults to the CSV path with a .truth.json suffix.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long = "units")]
    pub n_units: Option<usize>,
    #[arg(long = "times")]
    pub n_times: Option<usize>,
    #[arg(long)]
    pub r2: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Share of time points in the change block.
    #[arg(long)]
    pub change_proportion: Option<f64>,
    #[arg(long, value_enum, default_value_t = PositionArg::Start)]
    pub change_position: PositionArg,
    #[arg(long, default_value_t = 0.75)]
    pub rho_prime: f64,
    /// Share of units given the heterogeneous neighborhood effect.
    #[arg(long)]
    pub hetero_proportion: Option<f64>,
    #[arg(long, default_value_t = 4)]
    pub neighborhoods: usize,
    #[arg(long, default_value_t = 1.25)]
    pub delta_prime: f64,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Panel CSV in long format.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "unit")]
    pub unit_col: String,
    #[arg(long, default_value = "time")]
    pub time_col: String,
    #[arg(long, default_value = "y")]
    pub y_col: String,
    /// Covariate columns; defaults to x1, x2, ...
    #[arg(long = "x-col", value_delimiter = ',')]
    pub x_cols: Vec<String>,
    /// Neighborhood-variable columns; defaults to w or w1, w2, ...
    #[arg(long = "w-col", value_delimiter = ',')]
    pub w_cols: Vec<String>,
    #[arg(long)]
    pub neighborhood_col: Option<String>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Reuse the settings, seed and column mapping recorded in an earlier report.
    #[arg(long)]
    pub from_report: Option<PathBuf>,
    /// Write the full JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    /// Bootstrap resamples (B).
    #[arg(short = 'B', long)]
    pub resamples: Option<usize>,
    /// Resample size (n); defaults to half the sample.
    #[arg(short = 'n', long)]
    pub subsample: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub statistic: Option<StatisticArg>,
    /// Draw the interval from the bootstrap statistics or from the pooled resampled values.
    #[arg(long, value_enum)]
    pub basis: Option<BasisArg>,
}

#[derive(Debug, Args)]
pub struct SieveArgs {
    /// Sieve replicates per unit (m).
    #[arg(short = 'm', long)]
    pub replicates: Option<usize>,
    #[arg(long, value_enum)]
    pub regressors: Option<RegressorsArg>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Initial subset size (l); defaults to half the units.
    #[arg(short = 'l', long)]
    pub initial_size: Option<usize>,
    /// Stopping threshold on the jump in max Cook's distance; `inf` disables stopping.
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Args)]
pub struct StructuralArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub sieve: SieveArgs,
    #[command(flatten)]
    pub bootstrap: BootstrapArgs,
}

#[derive(Debug, Args)]
pub struct SpatialArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    #[command(flatten)]
    pub bootstrap: BootstrapArgs,
    /// Write the per-time forward-search traces as JSON.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct JointArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub sieve: SieveArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    #[command(flatten)]
    pub bootstrap: BootstrapArgs,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Convergence tolerance; `inf` stops after one pass.
    #[arg(long)]
    pub converge_tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Grid description in TOML.
    #[arg(long)]
    pub grid: PathBuf,
    /// Directory for the table, CSV, JSON summary and checkpoints.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = LayoutArg::Auto)]
    pub layout: LayoutArg,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, value_enum)]
    pub profile: Option<ProfileArg>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Recompute everything instead of resuming from checkpoints.
    #[arg(long)]
    pub no_checkpoint: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PositionArg {
    Start,
    Middle,
    End,
}

impl From<PositionArg> for Position {
    fn from(value: PositionArg) -> Self {
        match value {
            PositionArg::Start => Position::Start,
            PositionArg::Middle => Position::Middle,
            PositionArg::End => Position::End,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StatisticArg {
    Mean,
    Median,
}

impl From<StatisticArg> for Statistic {
    fn from(value: StatisticArg) -> Self {
        match value {
            StatisticArg::Mean => Statistic::Mean,
            StatisticArg::Median => Statistic::Median,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BasisArg {
    Statistic,
    Pooled,
}

impl From<BasisArg> for IntervalBasis {
    fn from(value: BasisArg) -> Self {
        match value {
            BasisArg::Statistic => IntervalBasis::Statistic,
            BasisArg::Pooled => IntervalBasis::Pooled,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RegressorsArg {
    Full,
    CovariatesOnly,
}

impl From<RegressorsArg> for Regressors {
    fn from(value: RegressorsArg) -> Self {
        match value {
            RegressorsArg::Full => Regressors::Full,
            RegressorsArg::CovariatesOnly => Regressors::CovariatesOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProfileArg {
    Desk,
    Quick,
}

impl From<ProfileArg> for Profile {
    fn from(value: ProfileArg) -> Self {
        match value {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Quick => Profile::Quick,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LayoutArg {
    /// Position panels for change scenarios, neighborhood panels for heterogeneity, flat otherwise.
    Auto,
    ByPosition,
    ByNeighborhoods,
    Flat,
}

impl LayoutArg {
    pub fn resolve(self, has_change: bool, has_heterogeneity: bool) -> Layout {
        match self {
            LayoutArg::ByPosition => Layout::ByPosition,
            LayoutArg::ByNeighborhoods => Layout::ByNeighborhoods,
            LayoutArg::Flat => Layout::Flat,
            LayoutArg::Auto => match (has_change, has_heterogeneity) {
                (true, false) => Layout::ByPosition,
                (false, true) => Layout::ByNeighborhoods,
                _ => Layout::Flat,
            },
        }
    }
}
