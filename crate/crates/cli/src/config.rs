//! Optional TOML defaults. Top-level keys apply to every subcommand; the
//! `[decompose]`, `[impute]`, `[detect]` and `[bench]` tables hold the
//! library options of the same name. Flags always win.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use tsclean::bench::{Method, StudyConfig};
use tsclean::decompose::DecomposeOptions;
use tsclean::missing::{ImputeOptions, LagSet};
use tsclean::outlier::{CovarianceFamily, DetectOptions};
use tsclean::solvers::LambdaRule;

use crate::args::{DecomposeFlags, DetectFlags, ImputeFlags, InputArgs};
use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seasonalities: Option<Vec<usize>>,
    pub taus: Option<Vec<f64>>,
    /// Seed of detection and of the masking study.
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub columns: Option<Vec<String>>,
    pub externals: Option<Vec<String>>,
    pub sentinels: Option<Vec<f64>>,
    pub whole_period: Option<bool>,
    pub sentinel_period: Option<usize>,
    pub max_outlier_share: Option<f64>,
    /// Primary period for detection.
    pub s1: Option<usize>,
    pub decompose: DecomposeOptions,
    pub impute: ImputeOptions,
    pub detect: DetectOptions,
    pub bench: StudyConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("reading {}: {e}", path.display())))?;
        let mut cfg: FileConfig = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        if let Some(seed) = cfg.seed {
            cfg.detect.seed = seed;
            cfg.bench.seed = seed;
        }
        Ok(cfg)
    }
}

/// Input handling after merging flags over the file.
#[derive(Debug, Clone)]
pub struct InputSettings {
    pub path: PathBuf,
    pub seasonalities: Vec<usize>,
    pub columns: Option<Vec<String>>,
    pub sentinels: Vec<f64>,
    pub whole_period: bool,
    pub sentinel_period: Option<usize>,
}

pub fn input_settings(args: &InputArgs, cfg: &FileConfig) -> InputSettings {
    InputSettings {
        path: args.input.clone(),
        seasonalities: args
            .seasonalities
            .clone()
            .or_else(|| cfg.seasonalities.clone())
            .unwrap_or_default(),
        columns: args.columns.clone().or_else(|| cfg.columns.clone()),
        sentinels: args.sentinels.clone().or_else(|| cfg.sentinels.clone()).unwrap_or_default(),
        whole_period: args.whole_period || cfg.whole_period.unwrap_or(false),
        sentinel_period: args.sentinel_period.or(cfg.sentinel_period),
    }
}

pub fn decompose_options(flags: &DecomposeFlags, cfg: &FileConfig) -> DecomposeOptions {
    let mut o = cfg.decompose.clone();
    if let Some(w) = flags.trend_window {
        o.trend_window = Some(w);
    }
    if let Some(i) = flags.iterations {
        o.iterations = i;
    }
    if let Some(l) = flags.lambda {
        o.lambda_rule = LambdaRule::Fixed(l);
    }
    o
}

pub fn impute_options(flags: &ImputeFlags, decompose: DecomposeOptions, cfg: &FileConfig) -> Result<ImputeOptions, CliError> {
    let mut o = cfg.impute.clone();
    o.decompose = decompose;
    if flags.no_recursive {
        o.recursive = false;
    }
    if let Some(r) = flags.rho_min {
        o.rho_min = r;
    }
    if let Some(p) = flags.ar_order {
        o.ar_order = Some(p);
    }
    if let Some(lags) = &flags.lags {
        o.lag_set = Some(LagSet::new(lags.clone()).map_err(|e| CliError::Usage(format!("--lags: {e}")))?);
    }
    if let Some(l) = &flags.external_lags {
        o.external_lags = l.clone();
    }
    Ok(o)
}

pub fn detect_options(flags: &DetectFlags, cfg: &FileConfig) -> Result<DetectOptions, CliError> {
    let mut o = cfg.detect.clone();
    if let Some(v) = flags.threshold {
        o.threshold = v;
    }
    if let Some(v) = flags.subsets {
        o.subsets = v;
    }
    if let Some(v) = flags.subset_size {
        o.subset_size = v;
    }
    if let Some(v) = flags.g_max {
        o.g_max = v;
    }
    if let Some(names) = &flags.families {
        o.families = names
            .iter()
            .map(|n| CovarianceFamily::parse(n).map_err(|e| CliError::Usage(format!("--families: {e}"))))
            .collect::<Result<_, _>>()?;
    }
    if let Some(v) = flags.alpha {
        o.alpha = v;
    }
    if let Some(v) = flags.inflation {
        o.inflation = v;
    }
    if let Some(v) = flags.cluster_sds {
        o.cluster_sds = v;
    }
    if flags.no_refine {
        o.refine = false;
    }
    if let Some(v) = flags.seed {
        o.seed = v;
    }
    o.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(o)
}

pub fn study_config(args: &crate::args::BenchArgs, cfg: &FileConfig) -> Result<StudyConfig, CliError> {
    let mut c = cfg.bench.clone();
    if let Some(s) = &args.shares {
        c.shares = s.clone();
    }
    if let Some(r) = args.reps {
        c.repetitions = r;
    }
    if let Some(s) = args.seed {
        c.seed = s;
    }
    if let Some(m) = args.block_mean {
        c.block_mean = m;
    }
    if let Some(s) = args.block_sd {
        c.block_sd = s;
    }
    if let Some(names) = &args.methods {
        c.methods = names
            .iter()
            .map(|n| Method::parse(n).map_err(|e| CliError::Usage(format!("--methods: {e}"))))
            .collect::<Result<_, _>>()?;
    }
    c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(c)
}
