//! Missing-tolerant robust decomposition into trend, seasonal phase tables
//! and an external-input component.
//!
//! The trend is a centered rolling median, each seasonality is a table of
//! per-phase medians (removed in ascending period order and centered), and
//! whatever remains is regressed on the external inputs with a lasso. The
//! cycle is repeated a fixed number of times. The remainder is defined as the
//! exact difference `y - fit`, so reconstruction holds on every observed cell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::SeriesFrame;
use crate::solvers::{default_lambda_grid, fit_weighted_lasso, lambda_max, select_lambda, DesignMatrix, LambdaRule};
use crate::stats::{median_finite, median_in_place, std_dev, SortedWindow};

/// Trend window used when a series has no seasonality.
const NON_SEASONAL_WINDOW: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecomposeOptions {
    pub iterations: usize,
    /// Overrides the default window (largest odd integer ≤ max(S)+1).
    pub trend_window: Option<usize>,
    pub lambda_rule: LambdaRule,
    /// Adds products of each external with each scaled seasonal component.
    pub interactions: bool,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self {
            iterations: 2,
            trend_window: None,
            lambda_rule: LambdaRule::Bic,
            interactions: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub periods: Vec<usize>,
    pub trend: Vec<f64>,
    /// One full-length component per period.
    pub seasonal: Vec<Vec<f64>>,
    /// The centered phase table behind each seasonal component.
    pub phase_tables: Vec<Vec<f64>>,
    pub external: Vec<f64>,
    /// Lasso coefficients of the externals (then interactions, if enabled).
    pub external_coefficients: Vec<f64>,
    /// `y - fit`, NaN where `y` is missing.
    pub remainder: Vec<f64>,
}

impl Decomposition {
    pub fn len(&self) -> usize {
        self.trend.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trend.is_empty()
    }

    /// Trend plus seasonal plus external at `t`.
    pub fn fitted(&self, t: usize) -> f64 {
        self.trend[t] + self.seasonal.iter().map(|s| s[t]).sum::<f64>() + self.external[t]
    }

    /// Trend plus seasonal (no externals) at `t`.
    pub fn deterministic(&self, t: usize) -> f64 {
        self.trend[t] + self.seasonal.iter().map(|s| s[t]).sum::<f64>()
    }

    /// Columns `[trend, seasonal_1, ..., seasonal_K, external]`.
    pub fn components_matrix(&self) -> Vec<&[f64]> {
        let mut cols: Vec<&[f64]> = Vec::with_capacity(self.seasonal.len() + 2);
        cols.push(&self.trend);
        cols.extend(self.seasonal.iter().map(Vec::as_slice));
        cols.push(&self.external);
        cols
    }

    pub fn component_names(&self) -> Vec<String> {
        let mut names = vec!["trend".to_string()];
        names.extend(self.periods.iter().map(|p| format!("seasonal_{p}")));
        names.push("external".to_string());
        names
    }
}

/// Largest odd integer not above `max(S) + 1`.
pub fn default_trend_window(periods: &[usize]) -> usize {
    match periods.iter().max() {
        Some(&p) => {
            let w = p + 1;
            if w % 2 == 1 {
                w
            } else {
                w - 1
            }
        }
        None => NON_SEASONAL_WINDOW,
    }
}

/// Centered rolling median over the observed (finite) values. Within half a
/// window of either end the nearest full window is used, so edges hold the
/// first and last full-window medians. Windows without any observation are
/// filled by linear interpolation between defined neighbours.
pub fn robust_trend(y: &[f64], window: usize) -> Result<Vec<f64>> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::invalid(format!(
            "trend window must be odd and at least 3, got {window}"
        )));
    }
    if y.iter().all(|v| !v.is_finite()) {
        return Err(Error::AllMissing {
            column: "trend input".into(),
        });
    }
    let n = y.len();
    let window = window.min(if n % 2 == 1 { n } else { n.saturating_sub(1) });
    let half = window / 2;
    let mut win = SortedWindow::with_capacity(window);
    let mut out = vec![f64::NAN; n];
    for &v in &y[..window] {
        if v.is_finite() {
            win.insert(v);
        }
    }
    for t in half..n - half {
        if t > half {
            let leave = y[t - half - 1];
            if leave.is_finite() {
                win.remove(leave);
            }
            let enter = y[t + half];
            if enter.is_finite() {
                win.insert(enter);
            }
        }
        if !win.is_empty() {
            out[t] = win.median();
        }
    }
    crate::stats::interpolate_gaps(&mut out);
    Ok(out)
}

/// Per-phase medians of the observed values, centered to mean zero. Phases
/// without observations contribute 0 before centering.
pub fn seasonal_phase_medians(detrended: &[f64], period: usize) -> Vec<f64> {
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); period];
    for (t, &v) in detrended.iter().enumerate() {
        if v.is_finite() {
            buckets[t % period].push(v);
        }
    }
    let mut table: Vec<f64> = buckets
        .iter_mut()
        .map(|b| if b.is_empty() { 0.0 } else { median_in_place(b) })
        .collect();
    let center = table.iter().sum::<f64>() / period as f64;
    for v in &mut table {
        *v -= center;
    }
    table
}

fn expand(table: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|t| table[t % table.len()]).collect()
}

/// Lasso fit of the remainder on the externals. Rows with a missing remainder
/// or external are left out of the fit; missing externals are replaced by the
/// column median when the fitted values are expanded to the full grid.
/// Returns the fitted component and the coefficients on the original scale.
pub fn external_component(
    remainder: &[f64],
    externals: &[Vec<f64>],
    rule: LambdaRule,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = remainder.len();
    let q = externals.len();
    if q == 0 {
        return Ok((vec![0.0; n], Vec::new()));
    }
    if externals.iter().any(|c| c.len() != n) {
        return Err(Error::invalid("external columns must match the series length"));
    }
    let rows: Vec<usize> = (0..n)
        .filter(|&t| remainder[t].is_finite() && externals.iter().all(|c| c[t].is_finite()))
        .collect();
    if rows.len() < 2 {
        return Ok((vec![0.0; n], vec![0.0; q]));
    }
    let mut data = Vec::with_capacity(rows.len() * q);
    for &t in &rows {
        data.extend(externals.iter().map(|c| c[t]));
    }
    let x = DesignMatrix::from_row_major(rows.len(), q, data)?;
    let y: Vec<f64> = rows.iter().map(|&t| remainder[t]).collect();
    let w = vec![1.0; rows.len()];
    let grid = default_lambda_grid(lambda_max(&x, &y, &w)?);
    let path = fit_weighted_lasso(&x, &y, &w, &grid)?;
    let fit = select_lambda(&path, rule)?;
    let fills: Vec<f64> = externals
        .iter()
        .map(|c| {
            let m = median_finite(c.iter().copied());
            if m.is_finite() {
                m
            } else {
                0.0
            }
        })
        .collect();
    let mut row = vec![0.0; q];
    let component = (0..n)
        .map(|t| {
            for j in 0..q {
                let v = externals[j][t];
                row[j] = if v.is_finite() { v } else { fills[j] };
            }
            fit.predict(&row)
        })
        .collect();
    Ok((component, fit.coefficients))
}

fn interaction_columns(externals: &[Vec<f64>], seasonal: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut cols = Vec::new();
    for x in externals {
        for s in seasonal {
            let sd = std_dev(s);
            if sd > 0.0 {
                cols.push(x.iter().zip(s).map(|(a, b)| a * b / sd).collect());
            }
        }
    }
    cols
}

/// Decomposes series `col` of `frame`. `externals` are full-length columns
/// (NaN where unknown).
pub fn robust_decompose(
    frame: &SeriesFrame,
    col: usize,
    externals: Option<&[Vec<f64>]>,
    options: &DecomposeOptions,
) -> Result<Decomposition> {
    let series = frame
        .columns()
        .get(col)
        .ok_or_else(|| Error::UnknownColumn(format!("#{col}")))?;
    if series.missing_count() == series.len() {
        return Err(Error::AllMissing {
            column: series.name().to_string(),
        });
    }
    decompose_values(
        series.values(),
        frame.seasonalities().periods(),
        externals.unwrap_or(&[]),
        options,
    )
}

/// Same as [`robust_decompose`] on a raw value vector (NaN = missing).
pub fn decompose_values(
    y: &[f64],
    periods: &[usize],
    externals: &[Vec<f64>],
    options: &DecomposeOptions,
) -> Result<Decomposition> {
    let n = y.len();
    if let Some(&p) = periods.iter().max() {
        if n < 2 * p {
            return Err(Error::TooShort {
                needed: 2 * p,
                have: n,
            });
        }
    }
    if options.iterations == 0 {
        return Err(Error::invalid("decomposition needs at least one iteration"));
    }
    let window = options
        .trend_window
        .unwrap_or_else(|| default_trend_window(periods))
        .min(if n % 2 == 1 { n } else { n - 1 }.max(3));

    let mut seasonal: Vec<Vec<f64>> = vec![vec![0.0; n]; periods.len()];
    let mut tables: Vec<Vec<f64>> = periods.iter().map(|&p| vec![0.0; p]).collect();
    let mut external = vec![0.0; n];
    let mut coefficients = vec![0.0; externals.len()];
    let mut trend = vec![0.0; n];
    let mut work = vec![0.0; n];

    for _ in 0..options.iterations {
        for t in 0..n {
            work[t] = y[t] - seasonal.iter().map(|s| s[t]).sum::<f64>() - external[t];
        }
        trend = robust_trend(&work, window)?;
        for k in 0..periods.len() {
            for t in 0..n {
                let others: f64 = (0..periods.len())
                    .filter(|&l| l != k)
                    .map(|l| seasonal[l][t])
                    .sum();
                work[t] = y[t] - trend[t] - others - external[t];
            }
            tables[k] = seasonal_phase_medians(&work, periods[k]);
            seasonal[k] = expand(&tables[k], n);
        }
        if !externals.is_empty() {
            for t in 0..n {
                work[t] = y[t] - trend[t] - seasonal.iter().map(|s| s[t]).sum::<f64>();
            }
            let mut regressors: Vec<Vec<f64>> = externals.to_vec();
            if options.interactions {
                regressors.extend(interaction_columns(externals, &seasonal));
            }
            let (component, coefs) = external_component(&work, &regressors, options.lambda_rule)?;
            external = component;
            coefficients = coefs;
        }
    }

    let remainder = (0..n)
        .map(|t| {
            if y[t].is_finite() {
                y[t] - (trend[t] + seasonal.iter().map(|s| s[t]).sum::<f64>() + external[t])
            } else {
                f64::NAN
            }
        })
        .collect();
    Ok(Decomposition {
        periods: periods.to_vec(),
        trend,
        seasonal,
        phase_tables: tables,
        external,
        external_coefficients: coefficients,
        remainder,
    })
}
