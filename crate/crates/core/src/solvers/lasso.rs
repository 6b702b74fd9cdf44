//! Weighted lasso by cyclic coordinate descent on the standardized problem
//!
//! ```text
//! minimize  1/2 Σ vᵢ (ỹᵢ − x̃ᵢβ̃)² + λ Σ|β̃ⱼ|,   vᵢ = wᵢ / Σw
//! ```
//!
//! where columns and response are centered and scaled by their weighted mean
//! and SD. This is the `(1/2n) Σ wᵢ(...)²` form with weights rescaled to sum
//! to the number of positively weighted rows. The intercept is unpenalized.
//! `FitResult::lambda` is reported on this standardized scale.
//!
//! Coordinate descent runs on the weighted Gram matrix and is finished by an
//! active-set solve, so returned points satisfy the subgradient conditions to
//! near machine precision.

use nalgebra::{DMatrix, DVector};

use super::design::{weighted_standardization, DesignMatrix};
use super::{Diagnostics, FitResult, Target};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100_000;
const KKT_TOL: f64 = 1e-11;

/// How to pick one fit from a lasso path.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    Bic,
    Fixed(f64),
}

struct Prepared {
    /// Non-constant columns of the original matrix.
    active: Vec<usize>,
    gram: Vec<f64>,
    xty: Vec<f64>,
    x_mean: Vec<f64>,
    x_sd: Vec<f64>,
    y_mean: f64,
    y_sd: f64,
    n_pos: usize,
}

fn validate(x: &DesignMatrix, y: &[f64], w: &[f64]) -> Result<()> {
    if y.len() != x.rows() || w.len() != x.rows() {
        return Err(Error::invalid("response and weights must match the design rows"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("lasso response"));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("lasso weights"));
    }
    if w.iter().any(|v| *v < 0.0) {
        return Err(Error::invalid("weights must be nonnegative"));
    }
    if w.iter().sum::<f64>() <= 0.0 {
        return Err(Error::invalid("weights must not all be zero"));
    }
    Ok(())
}

fn prepare(x: &DesignMatrix, y: &[f64], w: &[f64]) -> Prepared {
    let (n, p) = (x.rows(), x.cols());
    let (x_mean, x_sd) = weighted_standardization(x.data(), n, p, w);
    let (ym, ysd) = weighted_standardization(y, n, 1, w);
    let (y_mean, y_sd) = (ym[0], ysd[0]);
    let active: Vec<usize> = (0..p).filter(|&j| x_sd[j] > 0.0).collect();
    let k = active.len();
    let total: f64 = w.iter().sum();
    let mut gram = vec![0.0; k * k];
    let mut xty = vec![0.0; k];
    let mut row = vec![0.0; k];
    if y_sd > 0.0 {
        for i in 0..n {
            if w[i] == 0.0 {
                continue;
            }
            let v = w[i] / total;
            for (a, &j) in active.iter().enumerate() {
                row[a] = (x.get(i, j) - x_mean[j]) / x_sd[j];
            }
            let yt = (y[i] - y_mean) / y_sd;
            for a in 0..k {
                let va = v * row[a];
                xty[a] += va * yt;
                for b in a..k {
                    gram[a * k + b] += va * row[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                gram[a * k + b] = gram[b * k + a];
            }
        }
    }
    Prepared {
        active,
        gram,
        xty,
        x_mean,
        x_sd,
        y_mean,
        y_sd,
        n_pos: w.iter().filter(|v| **v > 0.0).count(),
    }
}

/// Smallest penalty at which every coefficient is zero.
pub fn lambda_max(x: &DesignMatrix, y: &[f64], w: &[f64]) -> Result<f64> {
    validate(x, y, w)?;
    let prep = prepare(x, y, w);
    Ok(prep.xty.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

/// 50 log-spaced penalties from `lambda_max` down to `1e-3 * lambda_max`.
pub fn default_lambda_grid(lambda_max: f64) -> Vec<f64> {
    if lambda_max <= 0.0 {
        return vec![0.0];
    }
    const COUNT: usize = 50;
    let ratio: f64 = 1e-3;
    (0..COUNT)
        .map(|i| lambda_max * ratio.powf(i as f64 / (COUNT - 1) as f64))
        .collect()
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

fn kkt_violation(beta: &[f64], grad: &[f64], lambda: f64) -> f64 {
    beta.iter()
        .zip(grad)
        .map(|(&b, &g)| {
            if b == 0.0 {
                (g.abs() - lambda).max(0.0)
            } else {
                (g - lambda * b.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

fn gradient(gram: &[f64], xty: &[f64], beta: &[f64]) -> Vec<f64> {
    let k = beta.len();
    (0..k)
        .map(|a| xty[a] - (0..k).map(|b| gram[a * k + b] * beta[b]).sum::<f64>())
        .collect()
}

/// Solves the active-set stationarity system; `None` if the signs disagree.
fn polish(gram: &[f64], xty: &[f64], beta: &[f64], lambda: f64) -> Option<Vec<f64>> {
    let k = beta.len();
    let act: Vec<usize> = (0..k).filter(|&j| beta[j] != 0.0).collect();
    let mut out = vec![0.0; k];
    if !act.is_empty() {
        let m = DMatrix::from_fn(act.len(), act.len(), |a, b| gram[act[a] * k + act[b]]);
        let rhs = DVector::from_iterator(
            act.len(),
            act.iter().map(|&j| xty[j] - lambda * beta[j].signum()),
        );
        let sol = m.cholesky()?.solve(&rhs);
        for (a, &j) in act.iter().enumerate() {
            if sol[a] == 0.0 || sol[a].signum() != beta[j].signum() {
                return None;
            }
            out[j] = sol[a];
        }
    }
    Some(out)
}

/// Coordinate descent at one penalty, warm-started from `beta`.
fn solve_point(prep: &Prepared, lambda: f64, beta: &mut [f64]) -> (usize, bool, f64) {
    let k = beta.len();
    let gram = &prep.gram;
    let mut grad = gradient(gram, &prep.xty, beta);
    for sweep in 1..=MAX_SWEEPS {
        let mut max_delta = 0.0f64;
        for j in 0..k {
            let gjj = gram[j * k + j];
            let old = beta[j];
            let new = soft_threshold(grad[j] + gjj * old, lambda) / gjj;
            if new != old {
                let delta = new - old;
                for a in 0..k {
                    grad[a] -= gram[a * k + j] * delta;
                }
                beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < 1e-6 || sweep % 20 == 0 {
            if let Some(candidate) = polish(gram, &prep.xty, beta, lambda) {
                let g = gradient(gram, &prep.xty, &candidate);
                let viol = kkt_violation(&candidate, &g, lambda);
                if viol <= KKT_TOL {
                    beta.copy_from_slice(&candidate);
                    return (sweep, true, viol);
                }
            }
            grad = gradient(gram, &prep.xty, beta);
            let viol = kkt_violation(beta, &grad, lambda);
            if viol <= KKT_TOL {
                return (sweep, true, viol);
            }
        }
    }
    let viol = kkt_violation(beta, &grad, lambda);
    (MAX_SWEEPS, viol <= KKT_TOL, viol)
}

fn to_result(
    prep: &Prepared,
    x: &DesignMatrix,
    y: &[f64],
    w: &[f64],
    beta_std: &[f64],
    lambda: f64,
    diagnostics: Diagnostics,
) -> FitResult {
    let p = x.cols();
    let mut coefficients = vec![0.0; p];
    for (a, &j) in prep.active.iter().enumerate() {
        coefficients[j] = prep.y_sd * beta_std[a] / prep.x_sd[j];
    }
    let intercept = prep.y_mean
        - coefficients
            .iter()
            .zip(&prep.x_mean)
            .map(|(b, m)| b * m)
            .sum::<f64>();
    let total: f64 = w.iter().sum();
    let mut rss = 0.0;
    let mut rss_std = 0.0;
    for i in 0..x.rows() {
        if w[i] == 0.0 {
            continue;
        }
        let fitted = intercept
            + coefficients
                .iter()
                .zip(x.row(i))
                .map(|(b, v)| b * v)
                .sum::<f64>();
        let r = y[i] - fitted;
        rss += w[i] / total * r * r;
        if prep.y_sd > 0.0 {
            rss_std += w[i] / total * (r / prep.y_sd).powi(2);
        }
    }
    let penalty: f64 = beta_std.iter().map(|b| b.abs()).sum();
    FitResult {
        intercept,
        coefficients,
        target: Target::Mean,
        lambda: Some(lambda),
        objective: 0.5 * rss_std + lambda * penalty,
        rss: rss * prep.n_pos as f64,
        n_obs: prep.n_pos,
        diagnostics,
    }
}

/// Fits the lasso along a strictly descending penalty grid with warm starts.
pub fn fit_weighted_lasso(
    x: &DesignMatrix,
    y: &[f64],
    w: &[f64],
    lambdas: &[f64],
) -> Result<Vec<FitResult>> {
    validate(x, y, w)?;
    if lambdas.is_empty() {
        return Err(Error::invalid("empty penalty grid"));
    }
    if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::invalid("penalties must be finite and nonnegative"));
    }
    if lambdas.windows(2).any(|p| p[1] >= p[0]) {
        return Err(Error::invalid("penalty grid must be strictly descending"));
    }
    let prep = prepare(x, y, w);
    let mut beta = vec![0.0; prep.active.len()];
    let mut path = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let (iterations, converged, residual) = if prep.y_sd > 0.0 {
            solve_point(&prep, lambda, &mut beta)
        } else {
            (0, true, 0.0)
        };
        let diagnostics = Diagnostics {
            iterations,
            converged,
            optimality_residual: residual,
            note: None,
        };
        path.push(to_result(&prep, x, y, w, &beta, lambda, diagnostics));
    }
    Ok(path)
}

/// `n log(RSS/n) + df log(n)` with the weighted RSS.
pub fn lasso_bic(fit: &FitResult) -> f64 {
    let n = fit.n_obs.max(1) as f64;
    let mse = (fit.rss / n).max(f64::MIN_POSITIVE);
    n * mse.ln() + fit.df() as f64 * n.ln()
}

/// Picks a fit from a path.
pub fn select_lambda(path: &[FitResult], rule: LambdaRule) -> Result<FitResult> {
    if path.is_empty() {
        return Err(Error::invalid("empty lasso path"));
    }
    match rule {
        LambdaRule::Bic => {
            let best = path
                .iter()
                .min_by(|a, b| lasso_bic(a).total_cmp(&lasso_bic(b)))
                .expect("non-empty path");
            Ok(best.clone())
        }
        LambdaRule::Fixed(target) => {
            let distance = |fit: &FitResult| {
                let l = fit.lambda.unwrap_or(0.0);
                if target > 0.0 && l > 0.0 {
                    (l.ln() - target.ln()).abs()
                } else {
                    (l - target).abs()
                }
            };
            let best = path
                .iter()
                .min_by(|a, b| distance(a).total_cmp(&distance(b)))
                .expect("non-empty path");
            let mut out = best.clone();
            let chosen = out.lambda.unwrap_or(0.0);
            if (chosen - target).abs() > 1e-12 * target.abs().max(1e-300) {
                out.diagnostics.note = Some(format!(
                    "requested lambda {target} is not on the grid; using nearest {chosen}"
                ));
            }
            Ok(out)
        }
    }
}

/// Subgradient optimality violation of `fit`, recomputed from the data on the
/// standardized scale.
pub fn lasso_kkt_residual(x: &DesignMatrix, y: &[f64], w: &[f64], fit: &FitResult) -> Result<f64> {
    validate(x, y, w)?;
    let prep = prepare(x, y, w);
    if prep.y_sd == 0.0 {
        return Ok(0.0);
    }
    let lambda = fit.lambda.unwrap_or(0.0);
    let total: f64 = w.iter().sum();
    let k = prep.active.len();
    let beta_std: Vec<f64> = prep
        .active
        .iter()
        .map(|&j| fit.coefficients[j] * prep.x_sd[j] / prep.y_sd)
        .collect();
    let mut grad = vec![0.0; k];
    for i in 0..x.rows() {
        if w[i] == 0.0 {
            continue;
        }
        let xt: Vec<f64> = prep
            .active
            .iter()
            .map(|&j| (x.get(i, j) - prep.x_mean[j]) / prep.x_sd[j])
            .collect();
        let r = (y[i] - prep.y_mean) / prep.y_sd
            - xt.iter().zip(&beta_std).map(|(a, b)| a * b).sum::<f64>();
        let v = w[i] / total;
        for a in 0..k {
            grad[a] += v * xt[a] * r;
        }
    }
    Ok(kkt_violation(&beta_std, &grad, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_instance() -> (DesignMatrix, Vec<f64>) {
        let cols = vec![
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0],
            vec![0.5, -1.0, 2.0, 0.0, 1.5, -0.5, 1.0],
        ];
        let y: Vec<f64> = (0..7)
            .map(|i| 2.0 * cols[0][i] - 3.0 * cols[1][i] + 1.0 + 0.1 * ((i * 7 % 5) as f64 - 2.0))
            .collect();
        (DesignMatrix::from_columns(&cols).unwrap(), y)
    }

    #[test]
    fn null_model_at_lambda_max() {
        let (x, y) = small_instance();
        let w = vec![1.0; 7];
        let lmax = lambda_max(&x, &y, &w).unwrap();
        let path = fit_weighted_lasso(&x, &y, &w, &[lmax * 1.5, lmax]).unwrap();
        for fit in &path {
            assert!(fit.coefficients.iter().all(|b| *b == 0.0));
            assert!((fit.intercept - crate::stats::mean(&y)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_penalty_matches_normal_equations() {
        let (x, y) = small_instance();
        let w = vec![1.0; 7];
        let fit = &fit_weighted_lasso(&x, &y, &w, &[0.0]).unwrap()[0];
        let a = DMatrix::from_fn(7, 3, |i, j| if j == 0 { 1.0 } else { x.get(i, j - 1) });
        let b = DVector::from_vec(y.clone());
        let ls = (a.transpose() * &a).cholesky().unwrap().solve(&(a.transpose() * b));
        assert!((fit.intercept - ls[0]).abs() < 1e-6);
        assert!((fit.coefficients[0] - ls[1]).abs() < 1e-6);
        assert!((fit.coefficients[1] - ls[2]).abs() < 1e-6);
    }

    #[test]
    fn zero_weights_drop_rows() {
        let (x, y) = small_instance();
        let mut w = vec![1.0; 7];
        for wi in w.iter_mut().skip(4) {
            *wi = 0.0;
        }
        let grid = [0.05, 0.01];
        let weighted = fit_weighted_lasso(&x, &y, &w, &grid).unwrap();
        let rows: Vec<Vec<f64>> = (0..4).map(|i| x.row(i).to_vec()).collect();
        let sub = DesignMatrix::from_rows(&rows).unwrap();
        let direct = fit_weighted_lasso(&sub, &y[..4], &[1.0; 4], &grid).unwrap();
        for (a, b) in weighted.iter().zip(&direct) {
            assert!((a.intercept - b.intercept).abs() < 1e-10);
            for (ca, cb) in a.coefficients.iter().zip(&b.coefficients) {
                assert!((ca - cb).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn input_validation() {
        let (x, y) = small_instance();
        let w = vec![1.0; 7];
        assert!(fit_weighted_lasso(&x, &y, &w, &[]).is_err());
        assert!(fit_weighted_lasso(&x, &y, &w, &[0.1, 0.2]).is_err());
        let mut bad = y.clone();
        bad[0] = f64::INFINITY;
        assert!(fit_weighted_lasso(&x, &bad, &w, &[0.1]).is_err());
    }

    #[test]
    fn fixed_rule_snaps_to_grid() {
        let (x, y) = small_instance();
        let w = vec![1.0; 7];
        let path = fit_weighted_lasso(&x, &y, &w, &[1.0, 0.1, 0.01]).unwrap();
        let fit = select_lambda(&path, LambdaRule::Fixed(0.08)).unwrap();
        assert_eq!(fit.lambda, Some(0.1));
        assert!(fit.diagnostics.note.is_some());
        let exact = select_lambda(&path, LambdaRule::Fixed(0.01)).unwrap();
        assert!(exact.diagnostics.note.is_none());
        let single = select_lambda(&path[..1], LambdaRule::Bic).unwrap();
        assert_eq!(single, path[0]);
    }
}
