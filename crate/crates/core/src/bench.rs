//! Imputation study: block-wise random masking, share sweeps and repeated
//! runs of the model imputer against simple baselines.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::format_value;
use crate::missing::{model_missing_values, ImputeOptions};
use crate::rng::{child_seed, rng_for};
use crate::stats::median_finite;

/// Most of the series that masking may cover.
const MAX_MASKED_SHARE: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// The lagged-regression imputer (median forecast).
    Model,
    Locf,
    LinearInterp,
    SeasonalMedian,
    /// Returns the held-out truth; checks the harness itself.
    Truth,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Model => "model",
            Method::Locf => "locf",
            Method::LinearInterp => "linear_interp",
            Method::SeasonalMedian => "seasonal_median",
            Method::Truth => "truth",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "model" => Method::Model,
            "locf" => Method::Locf,
            "linear_interp" | "linear" => Method::LinearInterp,
            "seasonal_median" => Method::SeasonalMedian,
            "truth" => Method::Truth,
            other => return Err(Error::invalid(format!("unknown method {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub shares: Vec<f64>,
    pub repetitions: usize,
    /// Mean and SD of the gap length on the natural scale.
    pub block_mean: f64,
    pub block_sd: f64,
    pub seed: u64,
    pub methods: Vec<Method>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            shares: vec![0.01, 0.05, 0.1, 0.2, 0.5],
            repetitions: 20,
            block_mean: 12.0,
            block_sd: 6.0,
            seed: 1,
            methods: vec![
                Method::Model,
                Method::Locf,
                Method::LinearInterp,
                Method::SeasonalMedian,
            ],
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shares.is_empty() {
            return Err(Error::invalid("no shares given"));
        }
        if let Some(s) = self.shares.iter().find(|s| !(**s > 0.0 && **s < 1.0)) {
            return Err(Error::invalid(format!("share {s} is outside (0, 1)")));
        }
        if self.shares.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("shares must be strictly increasing"));
        }
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions must be positive"));
        }
        if !(self.block_mean > 0.0 && self.block_sd > 0.0) {
            return Err(Error::invalid("block mean and SD must be positive"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("no methods given"));
        }
        Ok(())
    }
}

/// Log-scale parameters of a log-normal with the given natural-scale mean
/// and SD.
pub fn lognormal_parameters(mean: f64, sd: f64) -> (f64, f64) {
    let sigma2 = (1.0 + (sd / mean).powi(2)).ln();
    (mean.ln() - sigma2 / 2.0, sigma2.sqrt())
}

/// Masks contiguous blocks with log-normal lengths at uniformly random
/// unmasked starts until at least `share * n` cells are masked. The first and
/// last cell are never masked.
pub fn generate_mar_mask(n: usize, share: f64, block_mean: f64, block_sd: f64, seed: u64) -> Result<Vec<bool>> {
    if !(share > 0.0 && share < 1.0) {
        return Err(Error::invalid(format!("share {share} is outside (0, 1)")));
    }
    let target = (share * n as f64).ceil() as usize;
    if share * (n as f64) < 1.0 || n < 3 {
        return Err(Error::invalid("share is too small for the series length"));
    }
    if target as f64 > MAX_MASKED_SHARE * n as f64 {
        return Err(Error::invalid(format!(
            "cannot mask share {share} without exceeding {MAX_MASKED_SHARE} of the series"
        )));
    }
    let (mu, sigma) = lognormal_parameters(block_mean, block_sd);
    let dist = LogNormal::new(mu, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = rng_for(seed, 0x6d61_736b);
    let mut mask = vec![false; n];
    let mut free: Vec<usize> = (1..n - 1).collect();
    let mut masked = 0;
    while masked < target {
        if free.is_empty() {
            return Err(Error::invalid("no unmasked cells left"));
        }
        let len = (dist.sample(&mut rng).round() as usize).max(1);
        let start = free[rng.random_range(0..free.len())];
        for m in mask.iter_mut().take((start + len).min(n - 1)).skip(start) {
            if !*m {
                *m = true;
                masked += 1;
            }
        }
        if masked as f64 > MAX_MASKED_SHARE * n as f64 {
            return Err(Error::invalid(format!(
                "cannot mask share {share} without exceeding {MAX_MASKED_SHARE} of the series"
            )));
        }
        free.retain(|&t| !mask[t]);
    }
    Ok(mask)
}

/// Last observation carried forward; leading gaps take the next observation.
pub fn locf(y: &[f64], mask: &[bool]) -> Vec<f64> {
    let mut out = y.to_vec();
    let mut last = None;
    for t in 0..y.len() {
        if mask[t] {
            if let Some(v) = last {
                out[t] = v;
            }
        } else {
            last = Some(y[t]);
        }
    }
    if let Some(first) = (0..y.len()).find(|&t| !mask[t]) {
        for v in out.iter_mut().take(first) {
            *v = y[first];
        }
    }
    out
}

/// Straight line between the observations around each gap; edge gaps hold
/// the nearest observation.
pub fn linear_interp(y: &[f64], mask: &[bool]) -> Vec<f64> {
    let mut out: Vec<f64> = y
        .iter()
        .zip(mask)
        .map(|(&v, &m)| if m { f64::NAN } else { v })
        .collect();
    crate::stats::interpolate_gaps(&mut out);
    out
}

/// Median of the observed values sharing the cell's phase modulo `period`;
/// phases without observations take the overall median.
pub fn seasonal_median(y: &[f64], mask: &[bool], period: usize) -> Vec<f64> {
    let period = period.max(1);
    let observed = |t: usize| (!mask[t]).then_some(y[t]);
    let overall = median_finite((0..y.len()).filter_map(observed));
    let table: Vec<f64> = (0..period)
        .map(|p| {
            let m = median_finite((p..y.len()).step_by(period).filter_map(observed));
            if m.is_finite() {
                m
            } else {
                overall
            }
        })
        .collect();
    (0..y.len())
        .map(|t| if mask[t] { table[t % period] } else { y[t] })
        .collect()
}

fn impute(method: Method, truth: &[f64], mask: &[bool], periods: &[usize]) -> Result<Vec<f64>> {
    Ok(match method {
        Method::Truth => truth.to_vec(),
        Method::Locf => locf(truth, mask),
        Method::LinearInterp => linear_interp(truth, mask),
        Method::SeasonalMedian => seasonal_median(truth, mask, periods.first().copied().unwrap_or(1)),
        Method::Model => {
            let y: Vec<f64> = truth
                .iter()
                .zip(mask)
                .map(|(&v, &m)| if m { f64::NAN } else { v })
                .collect();
            let (_, reps) = model_missing_values("y", &y, periods, &[], &[0.5], &ImputeOptions::default())?;
            let mut out = truth.to_vec();
            for (&t, &v) in reps.indices.iter().zip(reps.at(0.5)?) {
                out[t] = v;
            }
            out
        }
    })
}

/// Mean absolute error over the masked cells.
pub fn masked_mae(imputed: &[f64], truth: &[f64], mask: &[bool]) -> f64 {
    let (sum, count) = (0..truth.len())
        .filter(|&t| mask[t])
        .fold((0.0, 0usize), |(s, c), t| (s + (imputed[t] - truth[t]).abs(), c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// One (method, share) cell of the result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub method: Method,
    pub share: f64,
    /// Mean MAE over the successful repetitions (NaN if none succeeded).
    pub mae: f64,
    pub mean_seconds: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
}

impl StudyTable {
    pub fn get(&self, method: Method, share: f64) -> Option<&StudyRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && (r.share - share).abs() < 1e-12)
    }

    /// MAE table, one line per method and share. Deterministic for a fixed
    /// configuration.
    pub fn write_mae_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<table>", e);
        writeln!(out, "method,share,mae,failures").map_err(io)?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{}",
                r.method.name(),
                format_value(r.share),
                format_value(r.mae),
                r.failures
            )
            .map_err(io)?;
        }
        Ok(())
    }

    /// Wall-clock seconds per method and share.
    pub fn write_seconds_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<table>", e);
        writeln!(out, "method,share,seconds").map_err(io)?;
        for r in &self.rows {
            writeln!(out, "{},{},{:.6}", r.method.name(), format_value(r.share), r.mean_seconds)
                .map_err(io)?;
        }
        Ok(())
    }
}

struct RunOutcome {
    mae: Vec<Option<f64>>,
    seconds: Vec<f64>,
}

/// Runs every method on every share and repetition of a fully observed
/// series and aggregates mean MAE and time.
pub fn run_study(truth: &[f64], periods: &[usize], config: &StudyConfig) -> Result<StudyTable> {
    config.validate()?;
    if truth.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("the study needs a fully observed series"));
    }
    let jobs: Vec<(usize, usize)> = (0..config.shares.len())
        .flat_map(|s| (0..config.repetitions).map(move |r| (s, r)))
        .collect();
    let outcomes: Vec<RunOutcome> = jobs
        .par_iter()
        .map(|&(s, r)| {
            let seed = child_seed(child_seed(config.seed, s as u64), r as u64);
            let mask = generate_mar_mask(
                truth.len(),
                config.shares[s],
                config.block_mean,
                config.block_sd,
                seed,
            )?;
            let mut mae = Vec::with_capacity(config.methods.len());
            let mut seconds = Vec::with_capacity(config.methods.len());
            for &method in &config.methods {
                let start = Instant::now();
                let result = impute(method, truth, &mask, periods);
                seconds.push(start.elapsed().as_secs_f64());
                mae.push(result.ok().map(|imp| masked_mae(&imp, truth, &mask)));
            }
            Ok(RunOutcome { mae, seconds })
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (m, &method) in config.methods.iter().enumerate() {
        for (s, &share) in config.shares.iter().enumerate() {
            let runs = &outcomes[s * config.repetitions..(s + 1) * config.repetitions];
            let ok: Vec<f64> = runs.iter().filter_map(|o| o.mae[m]).collect();
            let mae = if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().sum::<f64>() / ok.len() as f64
            };
            rows.push(StudyRow {
                method,
                share,
                mae,
                mean_seconds: runs.iter().map(|o| o.seconds[m]).sum::<f64>() / runs.len() as f64,
                failures: runs.len() - ok.len(),
            });
        }
    }
    Ok(StudyTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    const NAN: f64 = f64::NAN;

    #[test]
    fn baselines_on_small_examples() {
        let y = [1.0, NAN, NAN, 4.0];
        let mask = [false, true, true, false];
        assert_eq!(locf(&y, &mask), vec![1.0, 1.0, 1.0, 4.0]);
        assert_eq!(linear_interp(&y, &mask), vec![1.0, 2.0, 3.0, 4.0]);
        let y = [1.0, 10.0, NAN, 12.0, 3.0, NAN];
        let mask = [false, false, true, false, false, true];
        let s = seasonal_median(&y, &mask, 2);
        assert_eq!((s[2], s[5]), (2.0, 11.0));
    }

    #[test]
    fn locf_backfills_the_head() {
        let y = [NAN, 2.0, NAN];
        assert_eq!(locf(&y, &[true, false, true]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn locf_on_a_ramp_matches_closed_form() {
        let n = 30;
        let truth: Vec<f64> = (0..n).map(|t| 0.5 * t as f64).collect();
        let mut mask = vec![false; n];
        let len = 7;
        for m in mask.iter_mut().skip(10).take(len) {
            *m = true;
        }
        let mae = masked_mae(&locf(&truth, &mask), &truth, &mask);
        let expected = 0.5 * (1..=len).sum::<usize>() as f64 / len as f64;
        assert!((mae - expected).abs() < 1e-12);
    }

    #[test]
    fn moment_matching() {
        let (mu, sigma) = lognormal_parameters(12.0, 6.0);
        assert!(((mu + sigma * sigma / 2.0).exp() - 12.0).abs() < 1e-12);
        let var = ((sigma * sigma).exp() - 1.0) * (2.0 * mu + sigma * sigma).exp();
        assert!((var.sqrt() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn mask_reaches_share_and_spares_the_ends() {
        let n = 17_520;
        let mask = generate_mar_mask(n, 0.1, 12.0, 6.0, 3).unwrap();
        let count = mask.iter().filter(|&&m| m).count();
        assert!(count as f64 >= 0.1 * n as f64);
        assert!((count as f64) < 0.1 * n as f64 + 100.0);
        assert!(!mask[0] && !mask[n - 1]);
        assert_eq!(mask, generate_mar_mask(n, 0.1, 12.0, 6.0, 3).unwrap());
    }

    #[test]
    fn impossible_shares_are_rejected() {
        assert!(generate_mar_mask(100, 0.95, 12.0, 6.0, 1).is_err());
        assert!(generate_mar_mask(10, 0.01, 12.0, 6.0, 1).is_err());
        assert!(generate_mar_mask(100, 0.0, 12.0, 6.0, 1).is_err());
    }
}
