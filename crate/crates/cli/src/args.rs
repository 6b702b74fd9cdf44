use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use log::LevelFilter;

#[derive(Debug, Parser)]
#[command(name = "tsclean", version, about = "Robust cleaning of time series: imputation and outlier detection")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "TSCLEAN_THREADS")]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "TSCLEAN_OUT")]
    pub out: Option<PathBuf>,
    /// TOML file with defaults; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: LevelFilter,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Robust trend/seasonal/external decomposition of each series.
    Decompose(DecomposeArgs),
    /// Model missing values and write quantile imputations.
    Impute(ImputeArgs),
    /// Outlier probabilities and causes for complete series.
    Detect(DetectArgs),
    /// Impute, detect and re-impute in one go.
    Clean(CleanArgs),
    /// Masking study of the imputer against simple baselines.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    pub input: PathBuf,
    /// Seasonal periods in observations, e.g. 48,336.
    #[arg(long = "s", value_delimiter = ',')]
    pub seasonalities: Option<Vec<usize>>,
    /// Restrict to these columns.
    #[arg(long, value_delimiter = ',')]
    pub columns: Option<Vec<String>>,
    /// Values re-coded as missing, e.g. 0.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub sentinels: Option<Vec<f64>>,
    /// Only re-code whole periods consisting of sentinels.
    #[arg(long)]
    pub whole_period: bool,
    /// Period for --whole-period; defaults to the shortest seasonality.
    #[arg(long)]
    pub sentinel_period: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct DecomposeFlags {
    #[arg(long)]
    pub trend_window: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Fixed lasso penalty for the external component instead of BIC.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct ImputeFlags {
    /// Predict gaps without feeding earlier predictions back.
    #[arg(long)]
    pub no_recursive: bool,
    #[arg(long)]
    pub rho_min: Option<f64>,
    #[arg(long)]
    pub ar_order: Option<usize>,
    /// Explicit lag set (negative values are leads).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub lags: Option<Vec<i64>>,
    /// Extra lags at which externals are screened.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub external_lags: Option<Vec<i64>>,
}

#[derive(Debug, Args, Default)]
pub struct DetectFlags {
    /// Primary period; defaults to the shortest seasonality.
    #[arg(long)]
    pub s1: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub subsets: Option<usize>,
    #[arg(long)]
    pub subset_size: Option<usize>,
    #[arg(long)]
    pub g_max: Option<usize>,
    /// Covariance families: spherical, diagonal, full.
    #[arg(long, value_delimiter = ',')]
    pub families: Option<Vec<String>>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub inflation: Option<f64>,
    #[arg(long)]
    pub cluster_sds: Option<f64>,
    #[arg(long)]
    pub no_refine: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub decompose: DecomposeFlags,
    /// Columns used as external inputs of every other column.
    #[arg(long, value_delimiter = ',')]
    pub externals: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_delimiter = ',', value_parser = parse_tau)]
    pub taus: Option<Vec<f64>>,
    #[command(flatten)]
    pub impute: ImputeFlags,
    #[command(flatten)]
    pub decompose: DecomposeFlags,
    /// Columns used as external inputs of every other column.
    #[arg(long, value_delimiter = ',')]
    pub externals: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub detect: DetectFlags,
}

#[derive(Debug, Args)]
pub struct CleanArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_delimiter = ',', value_parser = parse_tau)]
    pub taus: Option<Vec<f64>>,
    /// Columns flagged above this share are passed through.
    #[arg(long)]
    pub max_outlier_share: Option<f64>,
    #[command(flatten)]
    pub impute: ImputeFlags,
    #[command(flatten)]
    pub decompose: DecomposeFlags,
    #[command(flatten)]
    pub detect: DetectFlags,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_delimiter = ',', value_parser = parse_share)]
    pub shares: Option<Vec<f64>>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub block_mean: Option<f64>,
    #[arg(long)]
    pub block_sd: Option<f64>,
    /// model, locf, linear_interp, seasonal_median, truth.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
}

fn parse_open_unit(s: &str, what: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{what} {v} is outside (0, 1)"))
    }
}

fn parse_share(s: &str) -> Result<f64, String> {
    parse_open_unit(s, "share")
}

fn parse_tau(s: &str) -> Result<f64, String> {
    parse_open_unit(s, "quantile level")
}
