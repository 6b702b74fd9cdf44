//! Missing-value model: a lagged regression on the decomposition remainder,
//!
//! ```text
//! Y_t = b0 + Σ_{l ∈ L} b_l Y_{t-l} + Σ_i b_i X_{i,t} + e_t
//! ```
//!
//! where `Y` is the remainder, `L` a lag set with leads, and `X` the
//! decomposition components plus selected external inputs. The mean target is
//! fitted with a BIC-tuned lasso, each quantile target with pinball-loss
//! regression. Missing cells are then predicted in temporal order.

mod design;
mod lags;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decompose::{decompose_values, DecomposeOptions, Decomposition};
use crate::error::{Error, Result};
use crate::frame::SeriesFrame;
use crate::solvers::{
    default_lambda_grid, fit_quantile, fit_weighted_lasso, lambda_max, select_lambda, FitResult, LambdaRule,
};
use crate::stats::median_finite;

pub use design::{build_design, regressors, select_externals, ExternalTerm, Regressor, TrainingSet};
pub use lags::{default_ar_order, default_lag_set, lag_set_with_order, LagOrigin, LagSet};

use design::{build_design_for, independent_columns, regressor_value, training_rows};

/// Residual variance (on the correlation scale) below which a regressor is
/// treated as a linear combination of earlier ones.
const COLLINEARITY_TOL: f64 = 1e-9;
const MIN_TRAINING_ROWS: usize = 100;
const ROWS_PER_COLUMN: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImputeOptions {
    /// Feed earlier predictions back as lagged regressors.
    pub recursive: bool,
    /// Minimum absolute correlation for an external input to enter the model.
    pub rho_min: f64,
    /// Extra lags at which externals are screened (lag 0 always is).
    pub external_lags: Vec<i64>,
    /// Replaces the default lag set; disables automatic reduction.
    pub lag_set: Option<LagSet>,
    /// Replaces the default AR order.
    pub ar_order: Option<usize>,
    pub decompose: DecomposeOptions,
}

impl Default for ImputeOptions {
    fn default() -> Self {
        Self {
            recursive: true,
            rho_min: 0.6,
            external_lags: Vec::new(),
            lag_set: None,
            ar_order: None,
            decompose: DecomposeOptions::default(),
        }
    }
}

/// Fitted missing-value model of one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingModel {
    pub column: String,
    pub lag_set: LagSet,
    pub externals: Vec<ExternalTerm>,
    /// Regressors actually used, in design column order.
    pub regressors: Vec<Regressor>,
    pub regressor_names: Vec<String>,
    pub decomposition: Decomposition,
    pub mean_fit: FitResult,
    /// One fit per entry of `taus`.
    pub quantile_fits: Vec<FitResult>,
    pub taus: Vec<f64>,
    /// Fit whose predictions are written back during recursion.
    pub point_fit: FitResult,
    pub recursive: bool,
    pub training_rows: usize,
    pub notes: Vec<String>,
}

/// How the regressors of one prediction were obtained.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellProvenance {
    pub index: usize,
    /// Lags whose cell was itself predicted earlier in the sweep.
    pub imputed_lags: Vec<i64>,
    /// Lags whose cell was unavailable and replaced by its phase median.
    pub filled_lags: Vec<i64>,
    /// External regressors replaced by their column median.
    pub filled_externals: usize,
}

/// Modelled values for every missing cell of a series.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Replacements {
    pub indices: Vec<usize>,
    pub taus: Vec<f64>,
    /// `quantiles[k][i]` is the `taus[k]` value at `indices[i]`; monotone in
    /// `k` for every `i`.
    pub quantiles: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub provenance: Vec<CellProvenance>,
}

impl Replacements {
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    /// Values for level `tau`.
    pub fn at(&self, tau: f64) -> Result<&[f64]> {
        self.taus
            .iter()
            .position(|&t| (t - tau).abs() < 1e-12)
            .map(|k| self.quantiles[k].as_slice())
            .ok_or_else(|| Error::UnmodelledQuantile {
                tau,
                available: self.taus.clone(),
            })
    }
}

/// Sorted, duplicate-free quantile levels strictly inside (0, 1).
pub fn validate_taus(taus: &[f64]) -> Result<Vec<f64>> {
    if let Some(&bad) = taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(Error::invalid(format!("quantile level {bad} is outside (0, 1)")));
    }
    let mut out = taus.to_vec();
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(out)
}

/// Models and predicts the missing cells of series `col`.
///
/// `externals` are full-length columns (NaN where unknown); with `None` the
/// series is modelled on its own past and future only.
pub fn model_missing_data(
    frame: &SeriesFrame,
    col: usize,
    taus: &[f64],
    externals: Option<&[Vec<f64>]>,
    options: &ImputeOptions,
) -> Result<(MissingModel, Replacements)> {
    let series = frame
        .columns()
        .get(col)
        .ok_or_else(|| Error::UnknownColumn(format!("#{col}")))?;
    model_missing_values(
        series.name(),
        series.values(),
        frame.seasonalities().periods(),
        externals.unwrap_or(&[]),
        taus,
        options,
    )
}

/// [`model_missing_data`] on a raw value vector (NaN = missing).
pub fn model_missing_values(
    name: &str,
    y: &[f64],
    periods: &[usize],
    externals: &[Vec<f64>],
    taus: &[f64],
    options: &ImputeOptions,
) -> Result<(MissingModel, Replacements)> {
    let taus = validate_taus(taus)?;
    let n = y.len();
    if y.iter().all(|v| !v.is_finite()) {
        return Err(Error::AllMissing {
            column: name.to_string(),
        });
    }
    if externals.iter().any(|c| c.len() != n) {
        return Err(Error::invalid("external columns must match the series length"));
    }
    let mut notes = Vec::new();
    let decomposition = decompose_values(y, periods, externals, &options.decompose)?;
    let remainder = decomposition.remainder.clone();

    let terms = if externals.is_empty() {
        Vec::new()
    } else {
        let explained: Vec<f64> = remainder
            .iter()
            .zip(&decomposition.external)
            .map(|(r, e)| r + e)
            .collect();
        let (terms, warnings) =
            select_externals(&explained, externals, options.rho_min, &options.external_lags)?;
        notes.extend(warnings);
        terms
    };

    let components = decomposition.components_matrix();
    let all_rows: Vec<usize> = (0..n).collect();
    let lag_set = choose_lag_set(&remainder, periods, &components, externals, &terms, options, &mut notes)?;
    let candidate_cols = regressors(&lag_set, components.len(), &terms);
    let full = build_design_for(&remainder, &candidate_cols, &components, externals, &all_rows)
        .ok_or_else(|| Error::NoTrainingRows {
            lags: lag_set.lags().to_vec(),
        })?;
    let keep = independent_columns(&full.x, COLLINEARITY_TOL);
    let cols: Vec<Regressor> = keep.iter().map(|&j| candidate_cols[j].clone()).collect();
    let training = if cols.len() == candidate_cols.len() {
        full
    } else {
        build_design_for(&remainder, &cols, &components, externals, &all_rows).ok_or_else(|| {
            Error::NoTrainingRows {
                lags: lag_set.lags().to_vec(),
            }
        })?
    };

    let w = vec![1.0; training.y.len()];
    let grid = default_lambda_grid(lambda_max(&training.x, &training.y, &w)?);
    let path = fit_weighted_lasso(&training.x, &training.y, &w, &grid)?;
    let mean_fit = select_lambda(&path, LambdaRule::Bic)?;

    let needs_median = !taus.is_empty() && !taus.iter().any(|&t| t == 0.5);
    let mut levels = taus.clone();
    if needs_median {
        levels.push(0.5);
    }
    let mut fits: Vec<FitResult> = levels
        .par_iter()
        .map(|&tau| fit_quantile(&training.x, &training.y, tau))
        .collect::<Result<_>>()?;
    for (tau, fit) in levels.iter().zip(&fits) {
        if !fit.diagnostics.converged {
            notes.push(format!("quantile {tau} fit did not fully converge"));
        }
    }
    let point_fit = if taus.is_empty() {
        mean_fit.clone()
    } else if needs_median {
        fits.pop().expect("median fit")
    } else {
        fits[taus.iter().position(|&t| t == 0.5).expect("median level")].clone()
    };

    let component_names = decomposition.component_names();
    let external_names: Vec<String> = (0..externals.len()).map(|j| format!("external_{j}")).collect();
    let regressor_names = cols
        .iter()
        .map(|r| r.label(&component_names, &external_names))
        .collect();

    let model = MissingModel {
        column: name.to_string(),
        lag_set,
        externals: terms,
        regressors: cols,
        regressor_names,
        training_rows: training.rows.len(),
        mean_fit,
        quantile_fits: fits,
        taus,
        point_fit,
        recursive: options.recursive,
        notes,
        decomposition,
    };
    let replacements = predict_missing(&model, y, periods, externals);
    Ok((model, replacements))
}

fn choose_lag_set(
    remainder: &[f64],
    periods: &[usize],
    components: &[&[f64]],
    externals: &[Vec<f64>],
    terms: &[ExternalTerm],
    options: &ImputeOptions,
    notes: &mut Vec<String>,
) -> Result<LagSet> {
    let n = remainder.len();
    let all_rows: Vec<usize> = (0..n).collect();
    let count = |set: &LagSet| -> (usize, usize) {
        let cols = regressors(set, components.len(), terms);
        let rows = training_rows(remainder, &cols, components, externals, &all_rows).len();
        (rows, cols.len())
    };
    if let Some(set) = &options.lag_set {
        let (rows, _) = count(set);
        if rows == 0 {
            return Err(Error::NoTrainingRows {
                lags: set.lags().to_vec(),
            });
        }
        return Ok(set.clone());
    }
    let order = options
        .ar_order
        .unwrap_or_else(|| default_ar_order(periods, n));
    let ladder = lags::reduction_ladder(periods, order);
    let mut best: Option<(usize, usize)> = None;
    for (i, set) in ladder.iter().enumerate() {
        let (rows, cols) = count(set);
        if rows >= (ROWS_PER_COLUMN * cols).max(MIN_TRAINING_ROWS) {
            if i > 0 {
                notes.push(format!(
                    "lag set reduced to {} lags: {rows} complete training rows",
                    set.len()
                ));
            }
            return Ok(set.clone());
        }
        if rows > cols + 1 && best.map_or(true, |(_, r)| rows > r) {
            best = Some((i, rows));
        }
    }
    match best {
        Some((i, rows)) => {
            notes.push(format!(
                "only {rows} complete training rows; using {} lags",
                ladder[i].len()
            ));
            Ok(ladder[i].clone())
        }
        None => Err(Error::NoTrainingRows {
            lags: ladder[0].lags().to_vec(),
        }),
    }
}

/// Median of the observed remainder per primary-seasonal phase.
fn phase_fallback(remainder: &[f64], period: usize) -> Vec<f64> {
    let global = median_finite(remainder.iter().copied());
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); period];
    for (t, &v) in remainder.iter().enumerate() {
        if v.is_finite() {
            buckets[t % period].push(v);
        }
    }
    buckets
        .into_iter()
        .map(|b| {
            let m = median_finite(b);
            if m.is_finite() {
                m
            } else {
                global
            }
        })
        .collect()
}

struct RowFiller<'a> {
    model: &'a MissingModel,
    y: &'a [f64],
    components: Vec<&'a [f64]>,
    externals: &'a [Vec<f64>],
    fallback: Vec<f64>,
    period: usize,
    external_fill: Vec<f64>,
}

impl RowFiller<'_> {
    /// Regressors of cell `t` from `working`; unavailable cells take their
    /// phase median (lags) or column median (externals).
    fn fill(&self, t: usize, working: &[f64], row: &mut [f64], cell: &mut CellProvenance) {
        for (j, r) in self.model.regressors.iter().enumerate() {
            let v = regressor_value(r, t, working, &self.components, self.externals);
            row[j] = if v.is_finite() {
                if let Regressor::Lag(l) = r {
                    let source = (t as i64 - l) as usize;
                    if !self.y[source].is_finite() {
                        cell.imputed_lags.push(*l);
                    }
                }
                v
            } else {
                match r {
                    Regressor::Lag(l) => {
                        cell.filled_lags.push(*l);
                        self.fallback[(t as i64 - l).rem_euclid(self.period as i64) as usize]
                    }
                    Regressor::External { column, .. } => {
                        cell.filled_externals += 1;
                        self.external_fill[*column]
                    }
                    Regressor::Component(_) => 0.0,
                }
            };
        }
    }
}

/// Predicts every missing cell in temporal order. Recursive mode writes each
/// point prediction back so later cells can use it as a lagged regressor.
fn predict_missing(model: &MissingModel, y: &[f64], periods: &[usize], externals: &[Vec<f64>]) -> Replacements {
    let n = y.len();
    let decomposition = &model.decomposition;
    let period = periods.first().copied().unwrap_or(1);
    let filler = RowFiller {
        model,
        y,
        components: decomposition.components_matrix(),
        externals,
        fallback: phase_fallback(&decomposition.remainder, period),
        period,
        external_fill: externals
            .iter()
            .map(|c| {
                let m = median_finite(c.iter().copied());
                if m.is_finite() {
                    m
                } else {
                    0.0
                }
            })
            .collect(),
    };

    let indices: Vec<usize> = (0..n).filter(|&t| !y[t].is_finite()).collect();
    let mut working = decomposition.remainder.clone();
    let mut row = vec![0.0; model.regressors.len()];
    let mut quantiles = vec![Vec::with_capacity(indices.len()); model.taus.len()];
    let mut mean = Vec::with_capacity(indices.len());
    let mut provenance = Vec::with_capacity(indices.len());
    for &t in &indices {
        let mut cell = CellProvenance {
            index: t,
            ..CellProvenance::default()
        };
        filler.fill(t, &working, &mut row, &mut cell);
        let base = decomposition.fitted(t);
        mean.push(base + model.mean_fit.predict(&row));
        let mut values: Vec<f64> = model
            .quantile_fits
            .iter()
            .map(|f| base + f.predict(&row))
            .collect();
        values.sort_by(f64::total_cmp);
        for (k, v) in values.into_iter().enumerate() {
            quantiles[k].push(v);
        }
        if model.recursive {
            working[t] = model.point_fit.predict(&row);
        }
        provenance.push(cell);
    }

    Replacements {
        indices,
        taus: model.taus.clone(),
        quantiles,
        mean,
        provenance,
    }
}
