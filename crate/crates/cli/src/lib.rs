//! Batch front end for the qmem pipeline: simulate, analyze, fit, threshold
//! and campaign reporting. Every command writes plain CSV/JSON.

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

mod adev;
mod analyze;
mod fit;
pub mod io;
mod report;
mod simulate;
mod threshold;

pub use adev::cmd_adev;
pub use analyze::cmd_analyze;
pub use fit::cmd_fit_lifetime;
pub use report::cmd_report;
pub use simulate::cmd_simulate;
pub use threshold::cmd_threshold;

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or invalid config, unwritable output: exit 2.
    Usage(anyhow::Error),
    /// Malformed or inconsistent input data: exit 3.
    Data(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(e) | CliError::Data(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn usage<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Usage(e.into())
}

pub(crate) fn data<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Data(e.into())
}

#[derive(Debug, Parser)]
#[command(name = "qmem", version, about = "Warm-vapor quantum memory simulation and analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one run (or a campaign) into QTT1 tag files.
    Simulate(SimulateArgs),
    /// Fold, bin and evaluate a signal run against its noise reference.
    Analyze(AnalyzeArgs),
    /// Overlapping Allan deviation of a metric time series.
    Adev(AdevArgs),
    /// Exponential fit of a storage-time scan.
    FitLifetime(FitArgs),
    /// Classical fidelity bound for weak coherent states.
    Threshold(ThresholdArgs),
    /// Aggregate a simulated or recorded campaign directory.
    Report(ReportArgs),
}

/// `mon_start,mon_end,sig_start,sig_end` in ns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowsNs(pub [f64; 4]);

impl std::str::FromStr for WindowsNs {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let v = s
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| format!("{v:?} is not a number")))
            .collect::<Result<Vec<_>, _>>()?;
        let n = v.len();
        v.try_into().map(WindowsNs).map_err(|_| format!("expected four comma-separated values, got {n}"))
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Tag file for a single run; output directory with --campaign.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Simulate the vacuum reference (mu_in = 0) instead of the signal run.
    #[arg(long)]
    pub vacuum: bool,
    /// Number of campaign points; each gets a signal and a vacuum run.
    #[arg(long)]
    pub campaign: Option<usize>,
    #[arg(long, default_value_t = 53.1)]
    pub cadence_s: f64,
    /// Per-point log random-walk step on efficiency and noise.
    #[arg(long, default_value_t = 0.0)]
    pub drift: f64,
    /// Write sampled window counts (counts.csv) instead of per-point tag files.
    #[arg(long, requires = "campaign")]
    pub counts_only: bool,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub tags: PathBuf,
    /// Vacuum reference run recorded under the same settings.
    #[arg(long, required_unless_present = "noise_counts", conflicts_with = "noise_counts")]
    pub vacuum: Option<PathBuf>,
    /// Externally measured noise counts N_noi, instead of a vacuum run.
    #[arg(long)]
    pub noise_counts: Option<u64>,
    #[arg(long)]
    pub config: PathBuf,
    /// Monitor and signal windows in ns: mon_start,mon_end,sig_start,sig_end.
    #[arg(long, allow_hyphen_values = true)]
    pub windows: Option<WindowsNs>,
    /// Output directory for metrics.json and histogram CSVs.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Drop calibration uncertainties (statistical errors only).
    #[arg(long)]
    pub no_systematics: bool,
}

#[derive(Debug, Clone, Args)]
pub struct AdevArgs {
    /// CSV with a timestamp column (seconds) and a value column.
    #[arg(long)]
    pub series: PathBuf,
    #[arg(long)]
    pub tau0_s: f64,
    /// Divide by the series mean (fractional deviation).
    #[arg(long)]
    pub normalize: bool,
    /// Value column name; defaults to the second column.
    #[arg(long)]
    pub column: Option<String>,
    /// Every averaging factor instead of octaves.
    #[arg(long)]
    pub dense: bool,
    #[arg(long, default_value_t = 0.683)]
    pub confidence: f64,
    /// Fill single missing samples by linear interpolation instead of rejecting gaps.
    #[arg(long)]
    pub interpolate_gaps: bool,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// CSV with columns x, y and optional sigma_y.
    #[arg(long)]
    pub points: PathBuf,
    /// Unit weights even when sigma_y is given.
    #[arg(long)]
    pub unweighted: bool,
    /// Output JSON; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ThresholdArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub mu: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub eta: f64,
    /// Explicit Poisson cut-off; adaptive when absent.
    #[arg(long)]
    pub n_max: Option<usize>,
    /// Sweep mu_in over start:stop:points (log spaced) and emit mu_in,f_class rows.
    #[arg(long, conflicts_with = "mu")]
    pub sweep: Option<String>,
    /// Output file (JSON for a single point, CSV for a sweep); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the stratum table as CSV.
    #[arg(long)]
    pub strata_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub campaign_dir: PathBuf,
    /// Output directory; defaults to <campaign-dir>/report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Drop calibration uncertainties.
    #[arg(long)]
    pub no_systematics: bool,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a).map(|_| ()),
        Command::Analyze(a) => cmd_analyze(&a).map(|_| ()),
        Command::Adev(a) => cmd_adev(&a).map(|_| ()),
        Command::FitLifetime(a) => cmd_fit_lifetime(&a).map(|_| ()),
        Command::Threshold(a) => cmd_threshold(&a),
        Command::Report(a) => cmd_report(&a).map(|_| ()),
    }
}
