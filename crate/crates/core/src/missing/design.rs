use serde::{Deserialize, Serialize};

use crate::decompose::Decomposition;
use crate::error::{Error, Result};
use crate::solvers::DesignMatrix;
use crate::stats::pearson;

use super::lags::LagSet;

/// One external column entering the model at a given lag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalTerm {
    pub column: usize,
    pub lag: i64,
    pub correlation: f64,
}

/// A regressor of the missing-value model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Regressor {
    /// Remainder at `t - lag`.
    Lag(i64),
    /// Column `index` of the decomposition components matrix.
    Component(usize),
    External { column: usize, lag: i64 },
}

impl Regressor {
    pub fn label(&self, component_names: &[String], external_names: &[String]) -> String {
        match self {
            Regressor::Lag(l) => format!("lag({l})"),
            Regressor::Component(i) => component_names
                .get(*i)
                .cloned()
                .unwrap_or_else(|| format!("component_{i}")),
            Regressor::External { column, lag } => {
                let name = external_names
                    .get(*column)
                    .cloned()
                    .unwrap_or_else(|| format!("external_{column}"));
                if *lag == 0 {
                    name
                } else {
                    format!("{name}(lag {lag})")
                }
            }
        }
    }
}

fn shifted(values: &[f64], t: usize, lag: i64) -> f64 {
    let s = t as i64 - lag;
    if s < 0 || s as usize >= values.len() {
        f64::NAN
    } else {
        values[s as usize]
    }
}

/// Keeps the external columns (at lag 0 or any of `ext_lags`) whose absolute
/// Pearson correlation with `y` over jointly observed rows reaches `rho_min`.
/// Constant columns have correlation 0 and are reported in the warnings.
pub fn select_externals(
    y: &[f64],
    externals: &[Vec<f64>],
    rho_min: f64,
    ext_lags: &[i64],
) -> Result<(Vec<ExternalTerm>, Vec<String>)> {
    if !(0.0..=1.0).contains(&rho_min) {
        return Err(Error::invalid(format!(
            "correlation threshold {rho_min} is outside [0, 1]"
        )));
    }
    let mut lags = vec![0i64];
    lags.extend(ext_lags.iter().copied().filter(|&l| l != 0));
    lags.sort_unstable();
    lags.dedup();
    let mut terms = Vec::new();
    let mut warnings = Vec::new();
    let n = y.len();
    for (j, x) in externals.iter().enumerate() {
        if x.len() != n {
            return Err(Error::invalid("external columns must match the series length"));
        }
        for &lag in &lags {
            let (a, b): (Vec<f64>, Vec<f64>) = (0..n)
                .filter_map(|t| {
                    let xv = shifted(x, t, lag);
                    (y[t].is_finite() && xv.is_finite()).then_some((y[t], xv))
                })
                .unzip();
            let constant = b.windows(2).all(|w| w[0] == w[1]);
            if constant {
                warnings.push(format!(
                    "external column {j} at lag {lag} is constant on the observed rows"
                ));
            }
            let rho = if constant || a.len() < 3 { 0.0 } else { pearson(&a, &b) };
            if !constant && rho.abs() >= rho_min {
                terms.push(ExternalTerm {
                    column: j,
                    lag,
                    correlation: rho,
                });
            }
        }
    }
    Ok((terms, warnings))
}

/// Regressor layout for a lag set, the decomposition components and the
/// selected external terms.
pub fn regressors(lag_set: &LagSet, components: usize, terms: &[ExternalTerm]) -> Vec<Regressor> {
    let mut cols: Vec<Regressor> = lag_set.lags().iter().map(|&l| Regressor::Lag(l)).collect();
    cols.extend((0..components).map(Regressor::Component));
    cols.extend(terms.iter().map(|e| Regressor::External {
        column: e.column,
        lag: e.lag,
    }));
    cols
}

/// Value of regressor `r` at row `t`, NaN when unavailable.
pub(crate) fn regressor_value(
    r: &Regressor,
    t: usize,
    remainder: &[f64],
    components: &[&[f64]],
    externals: &[Vec<f64>],
) -> f64 {
    match r {
        Regressor::Lag(l) => shifted(remainder, t, *l),
        Regressor::Component(i) => components[*i][t],
        Regressor::External { column, lag } => shifted(&externals[*column], t, *lag),
    }
}

/// Rows of `candidates` where the target and every regressor are observed.
pub(crate) fn training_rows(
    remainder: &[f64],
    cols: &[Regressor],
    components: &[&[f64]],
    externals: &[Vec<f64>],
    candidates: &[usize],
) -> Vec<usize> {
    candidates
        .iter()
        .copied()
        .filter(|&t| {
            remainder[t].is_finite()
                && cols
                    .iter()
                    .all(|r| regressor_value(r, t, remainder, components, externals).is_finite())
        })
        .collect()
}

/// Training data of the missing-value model.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub x: DesignMatrix,
    pub y: Vec<f64>,
    pub rows: Vec<usize>,
}

/// Assembles the design over the rows of `t_rows` where the remainder and all
/// regressors are observed.
pub fn build_design(
    remainder: &[f64],
    lag_set: &LagSet,
    decomposition: &Decomposition,
    externals: &[Vec<f64>],
    terms: &[ExternalTerm],
    t_rows: &[usize],
) -> Result<TrainingSet> {
    let components = decomposition.components_matrix();
    let cols = regressors(lag_set, components.len(), terms);
    build_design_for(remainder, &cols, &components, externals, t_rows)
        .ok_or_else(|| Error::NoTrainingRows {
            lags: lag_set.lags().to_vec(),
        })
}

pub(crate) fn build_design_for(
    remainder: &[f64],
    cols: &[Regressor],
    components: &[&[f64]],
    externals: &[Vec<f64>],
    t_rows: &[usize],
) -> Option<TrainingSet> {
    let n = remainder.len();
    if t_rows.iter().any(|&t| t >= n) {
        return None;
    }
    let rows = training_rows(remainder, cols, components, externals, t_rows);
    if rows.is_empty() {
        return None;
    }
    let mut data = Vec::with_capacity(rows.len() * cols.len());
    for &t in &rows {
        data.extend(
            cols.iter()
                .map(|r| regressor_value(r, t, remainder, components, externals)),
        );
    }
    let x = DesignMatrix::from_row_major(rows.len(), cols.len(), data).ok()?;
    let y = rows.iter().map(|&t| remainder[t]).collect();
    Some(TrainingSet { x, y, rows })
}

/// Greedy in-order selection of columns that are not (numerically) linear
/// combinations of earlier kept columns or constant. Works on the correlation
/// matrix, so the tolerance is scale-free.
pub(crate) fn independent_columns(x: &DesignMatrix, tol: f64) -> Vec<usize> {
    let p = x.cols();
    let n = x.rows();
    let centers = x.col_centers();
    let scales = x.col_scales();
    let candidates: Vec<usize> = (0..p).filter(|&j| scales[j] > 0.0).collect();
    let q = candidates.len();
    let mut corr = vec![0.0; q * q];
    for i in 0..n {
        let row = x.row(i);
        let z: Vec<f64> = candidates
            .iter()
            .map(|&j| (row[j] - centers[j]) / scales[j])
            .collect();
        for a in 0..q {
            let za = z[a];
            for b in a..q {
                corr[a * q + b] += za * z[b];
            }
        }
    }
    for a in 0..q {
        for b in a..q {
            corr[a * q + b] /= n as f64;
            corr[b * q + a] = corr[a * q + b];
        }
    }
    // Incremental Cholesky of the kept block; a column is kept when its
    // residual variance after projection stays above `tol`.
    let mut kept: Vec<usize> = Vec::new();
    let mut l_rows: Vec<Vec<f64>> = Vec::new();
    for a in 0..q {
        let mut l = Vec::with_capacity(kept.len());
        for (i, &b) in kept.iter().enumerate() {
            let dot: f64 = (0..i).map(|k| l_rows[i][k] * l[k]).sum();
            l.push((corr[a * q + b] - dot) / l_rows[i][i]);
        }
        let resid = corr[a * q + a] - l.iter().map(|v| v * v).sum::<f64>();
        if resid > tol {
            l.push(resid.sqrt());
            l_rows.push(l);
            kept.push(a);
        }
    }
    kept.into_iter().map(|a| candidates[a]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_definition() {
        let r = [1.0, 2.0, 3.0];
        let lags = LagSet::new(vec![1]).unwrap();
        let cols = regressors(&lags, 0, &[]);
        let set = build_design_for(&r, &cols, &[], &[], &[0, 1, 2]).unwrap();
        assert_eq!(set.rows, vec![1, 2]);
        assert_eq!(set.y, vec![2.0, 3.0]);
        assert_eq!((set.x.get(0, 0), set.x.get(1, 0)), (1.0, 2.0));
    }

    #[test]
    fn leads_drop_last_row() {
        let r = [1.0, 2.0, 3.0, 4.0];
        let cols = regressors(&LagSet::new(vec![-1]).unwrap(), 0, &[]);
        let set = build_design_for(&r, &cols, &[], &[], &[0, 1, 2, 3]).unwrap();
        assert_eq!(set.rows, vec![0, 1, 2]);
    }

    #[test]
    fn exact_copy_is_selected() {
        let y: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let (terms, _) = select_externals(&y, &[y.clone()], 0.6, &[]).unwrap();
        assert_eq!(terms.len(), 1);
        assert_eq!(terms[0].lag, 0);
        assert!((terms[0].correlation - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_threshold_keeps_non_constant_columns() {
        let y: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let noise: Vec<f64> = (0..20).map(|i| ((i * 7919) % 13) as f64).collect();
        let (terms, warnings) =
            select_externals(&y, &[noise, vec![2.0; 20]], 0.0, &[]).unwrap();
        assert_eq!(terms.len(), 1);
        assert_eq!(terms[0].column, 0);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn collinear_columns_are_screened() {
        let a: Vec<f64> = (0..30).map(|i| (i as f64 * 0.3).sin()).collect();
        let b: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).cos()).collect();
        let c: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - y).collect();
        let x = DesignMatrix::from_columns(&[a, vec![1.0; 30], b, c]).unwrap();
        assert_eq!(independent_columns(&x, 1e-9), vec![0, 2]);
    }
}
