//! Linear quantile regression: minimize `Σ ρ_τ(yᵢ − β₀ − xᵢβ)` with the check
//! loss `ρ_τ(u) = u (τ − 1[u < 0])`.
//!
//! The problem is solved through its bounded dual
//!
//! ```text
//! max yᵀa   s.t.  Zᵀa = (1 − τ) Zᵀ1,   0 ≤ a ≤ 1
//! ```
//!
//! with a Mehrotra predictor-corrector interior-point method, in the spirit of
//! the Frisch-Newton solver. The interior iterate is then snapped to an exact
//! basic solution through the observations with the smallest residuals
//! whenever that vertex is at least as good. Intercept-only problems are
//! solved exactly by order statistics and return the lower endpoint of a
//! flat optimum.

use nalgebra::{DMatrix, DVector};

use super::design::DesignMatrix;
use super::{Diagnostics, FitResult, Target};
use crate::error::{Error, Result};
use crate::stats;

const MAX_ITER: usize = 200;
const GAP_TOL: f64 = 1e-11;
const STEP_SCALE: f64 = 0.99995;

/// Check-loss sum `Σ ρ_τ(u)`.
pub fn pinball_loss(residuals: &[f64], tau: f64) -> f64 {
    residuals
        .iter()
        .map(|&u| if u < 0.0 { (tau - 1.0) * u } else { tau * u })
        .sum()
}

/// Fits the `tau` quantile of `y` given the columns of `x` (plus intercept).
///
/// Rank-deficient designs do not raise: they come back with
/// `diagnostics.converged == false` and the best iterate found.
pub fn fit_quantile(x: &DesignMatrix, y: &[f64], tau: f64) -> Result<FitResult> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid(format!("quantile level {tau} is outside (0, 1)")));
    }
    if y.len() != x.rows() {
        return Err(Error::invalid("response length must match the design rows"));
    }
    if y.is_empty() {
        return Err(Error::invalid("quantile regression needs at least one observation"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("quantile response"));
    }
    let n = y.len();
    let active: Vec<usize> = (0..x.cols()).filter(|&j| x.col_scales()[j] > 0.0).collect();

    if active.is_empty() {
        return Ok(intercept_only(x.cols(), y, tau));
    }

    // Work on a standardized copy; the check loss is equivariant under these maps.
    let centers = x.col_centers();
    let scales = x.col_scales();
    let y_center = stats::median(y);
    let mut y_scale = stats::mad(y) * stats::MAD_TO_SD;
    if y_scale <= 0.0 {
        y_scale = stats::std_dev(y);
    }
    if y_scale <= 0.0 {
        y_scale = 1.0;
    }
    let q = active.len() + 1;
    let mut z = Vec::with_capacity(n * q);
    for i in 0..n {
        z.push(1.0);
        for &j in &active {
            z.push((x.get(i, j) - centers[j]) / scales[j]);
        }
    }
    let ys: Vec<f64> = y.iter().map(|v| (v - y_center) / y_scale).collect();

    let ip = interior_point(&z, &ys, n, q, tau);
    let mut coef_std = ip.beta.clone();
    let ip_objective = objective_at(&z, &ys, q, &coef_std, tau);
    let mut note = None;
    if let Some(vertex) = snap_to_vertex(&z, &ys, n, q, &ip.beta) {
        if objective_at(&z, &ys, q, &vertex, tau) <= ip_objective * (1.0 + 1e-12) + 1e-14 {
            coef_std = vertex;
        }
    }
    if ip.rank_deficient {
        note = Some("design is rank deficient".to_string());
    }

    let mut coefficients = vec![0.0; x.cols()];
    for (a, &j) in active.iter().enumerate() {
        coefficients[j] = y_scale * coef_std[a + 1] / scales[j];
    }
    let intercept = y_center + y_scale * coef_std[0]
        - active
            .iter()
            .map(|&j| coefficients[j] * centers[j])
            .sum::<f64>();
    let residuals: Vec<f64> = (0..n)
        .map(|i| {
            y[i] - intercept
                - coefficients
                    .iter()
                    .zip(x.row(i))
                    .map(|(b, v)| b * v)
                    .sum::<f64>()
        })
        .collect();
    Ok(FitResult {
        intercept,
        coefficients,
        target: Target::Quantile(tau),
        lambda: None,
        objective: pinball_loss(&residuals, tau),
        rss: residuals.iter().map(|r| r * r).sum(),
        n_obs: n,
        diagnostics: Diagnostics {
            iterations: ip.iterations,
            converged: ip.converged && !ip.rank_deficient,
            optimality_residual: ip.gap * y_scale,
            note,
        },
    })
}

fn intercept_only(p: usize, y: &[f64], tau: f64) -> FitResult {
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // Smallest order statistic y_(k) with k >= nτ.
    let k = ((n as f64 * tau - 1e-9).ceil() as usize).clamp(1, n);
    let b0 = sorted[k - 1];
    let residuals: Vec<f64> = y.iter().map(|v| v - b0).collect();
    FitResult {
        intercept: b0,
        coefficients: vec![0.0; p],
        target: Target::Quantile(tau),
        lambda: None,
        objective: pinball_loss(&residuals, tau),
        rss: residuals.iter().map(|r| r * r).sum(),
        n_obs: n,
        diagnostics: Diagnostics {
            iterations: 0,
            converged: true,
            optimality_residual: 0.0,
            note: None,
        },
    }
}

fn objective_at(z: &[f64], y: &[f64], q: usize, beta: &[f64], tau: f64) -> f64 {
    let r: Vec<f64> = y
        .iter()
        .enumerate()
        .map(|(i, yi)| yi - dot(&z[i * q..(i + 1) * q], beta))
        .collect();
    pinball_loss(&r, tau)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct IpOutcome {
    beta: Vec<f64>,
    iterations: usize,
    converged: bool,
    rank_deficient: bool,
    gap: f64,
}

/// `Zᵀ diag(d) Z` into a dense q×q matrix.
fn weighted_gram(z: &[f64], d: &[f64], n: usize, q: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(q, q);
    for i in 0..n {
        let row = &z[i * q..(i + 1) * q];
        let di = d[i];
        for a in 0..q {
            let va = di * row[a];
            for b in a..q {
                m[(a, b)] += va * row[b];
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            m[(a, b)] = m[(b, a)];
        }
    }
    m
}

fn factor(m: DMatrix<f64>) -> (nalgebra::Cholesky<f64, nalgebra::Dyn>, bool) {
    let q = m.nrows();
    if let Some(c) = m.clone().cholesky() {
        // Ill-conditioning shows up as a tiny pivot relative to the diagonal.
        let diag_max = (0..q).map(|i| m[(i, i)]).fold(0.0f64, f64::max);
        let l = c.l();
        let min_pivot = (0..q).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
        return (c, min_pivot < 1e-13 * diag_max);
    }
    let diag_max = (0..q).map(|i| m[(i, i)]).fold(0.0f64, f64::max).max(1.0);
    let mut ridge = 1e-12 * diag_max;
    loop {
        let mut r = m.clone();
        for i in 0..q {
            r[(i, i)] += ridge;
        }
        if let Some(c) = r.cholesky() {
            return (c, true);
        }
        ridge *= 100.0;
    }
}

fn max_step(x: &[f64], dx: &[f64]) -> f64 {
    x.iter()
        .zip(dx)
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

fn interior_point(z: &[f64], y: &[f64], n: usize, q: usize, tau: f64) -> IpOutcome {
    let zt_mul = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; q];
        for i in 0..n {
            let row = &z[i * q..(i + 1) * q];
            for a in 0..q {
                out[a] += row[a] * v[i];
            }
        }
        out
    };
    let z_mul = |b: &[f64]| -> Vec<f64> { (0..n).map(|i| dot(&z[i * q..(i + 1) * q], b)).collect() };

    // Start: a = 1 − τ is dual feasible by construction; β from least squares.
    let mut a = vec![1.0 - tau; n];
    let b = zt_mul(&a);
    let (gram_factor, rank_deficient) = factor(weighted_gram(z, &vec![1.0; n], n, q));
    let mut beta: Vec<f64> = gram_factor
        .solve(&DVector::from_vec(zt_mul(y)))
        .iter()
        .copied()
        .collect();
    let r0: Vec<f64> = y.iter().zip(z_mul(&beta)).map(|(yi, f)| yi - f).collect();
    let shift = (r0.iter().map(|v| v.abs()).sum::<f64>() / n as f64).max(1e-3);
    let mut w: Vec<f64> = r0.iter().map(|r| r.max(0.0) + shift).collect();
    let mut zz: Vec<f64> = r0.iter().map(|r| (-r).max(0.0) + shift).collect();

    let mut iterations = 0;
    let mut converged = false;
    let mut gap = f64::INFINITY;
    let mut best_beta = beta.clone();
    let mut best_obj = f64::INFINITY;

    while iterations < MAX_ITER {
        let s: Vec<f64> = a.iter().map(|v| 1.0 - v).collect();
        let za = zt_mul(&a);
        let rb: Vec<f64> = b.iter().zip(&za).map(|(bb, v)| bb - v).collect();
        let fitted = z_mul(&beta);
        let rc: Vec<f64> = (0..n).map(|i| y[i] - fitted[i] + zz[i] - w[i]).collect();

        let obj: f64 = pinball_loss(
            &(0..n).map(|i| y[i] - fitted[i]).collect::<Vec<_>>(),
            tau,
        );
        if obj < best_obj {
            best_obj = obj;
            best_beta.clone_from(&beta);
        }
        gap = (0..n).map(|i| a[i] * zz[i] + s[i] * w[i]).sum::<f64>();
        let infeas = rc.iter().map(|v| v.abs()).fold(0.0f64, f64::max)
            + rb.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        if gap <= GAP_TOL * (1.0 + obj) && infeas <= 1e-9 * (1.0 + obj) {
            converged = true;
            break;
        }
        iterations += 1;
        let mu = gap / (2 * n) as f64;

        let d: Vec<f64> = (0..n).map(|i| 1.0 / (zz[i] / a[i] + w[i] / s[i])).collect();
        let (chol, _) = factor(weighted_gram(z, &d, n, q));

        let solve = |rho1: &[f64], rho2: &[f64]| {
            let qv: Vec<f64> = (0..n).map(|i| rho1[i] / a[i] - rho2[i] / s[i]).collect();
            let tmp: Vec<f64> = (0..n).map(|i| d[i] * (qv[i] - rc[i])).collect();
            let mut rhs = zt_mul(&tmp);
            for k in 0..q {
                rhs[k] -= rb[k];
            }
            let dbeta: Vec<f64> = chol.solve(&DVector::from_vec(rhs)).iter().copied().collect();
            let zdb = z_mul(&dbeta);
            let da: Vec<f64> = (0..n).map(|i| d[i] * (-rc[i] - zdb[i] + qv[i])).collect();
            let dz: Vec<f64> = (0..n).map(|i| (rho1[i] - zz[i] * da[i]) / a[i]).collect();
            let dw: Vec<f64> = (0..n).map(|i| (rho2[i] + w[i] * da[i]) / s[i]).collect();
            (da, dbeta, dz, dw)
        };

        // Predictor.
        let rho1: Vec<f64> = (0..n).map(|i| -a[i] * zz[i]).collect();
        let rho2: Vec<f64> = (0..n).map(|i| -s[i] * w[i]).collect();
        let (da, _, dz, dw) = solve(&rho1, &rho2);
        let neg_da: Vec<f64> = da.iter().map(|v| -v).collect();
        let ap = max_step(&a, &da).min(max_step(&s, &neg_da)).min(1.0);
        let ad = max_step(&zz, &dz).min(max_step(&w, &dw)).min(1.0);
        let mu_aff = (0..n)
            .map(|i| {
                (a[i] + ap * da[i]) * (zz[i] + ad * dz[i]) + (s[i] - ap * da[i]) * (w[i] + ad * dw[i])
            })
            .sum::<f64>()
            / (2 * n) as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector.
        let rho1: Vec<f64> = (0..n)
            .map(|i| sigma * mu - a[i] * zz[i] - da[i] * dz[i])
            .collect();
        let rho2: Vec<f64> = (0..n)
            .map(|i| sigma * mu - s[i] * w[i] + da[i] * dw[i])
            .collect();
        let (da, dbeta, dz, dw) = solve(&rho1, &rho2);
        let neg_da: Vec<f64> = da.iter().map(|v| -v).collect();
        let ap = (STEP_SCALE * max_step(&a, &da).min(max_step(&s, &neg_da))).min(1.0);
        let ad = (STEP_SCALE * max_step(&zz, &dz).min(max_step(&w, &dw))).min(1.0);
        for i in 0..n {
            a[i] += ap * da[i];
            zz[i] += ad * dz[i];
            w[i] += ad * dw[i];
        }
        for k in 0..q {
            beta[k] += ad * dbeta[k];
        }
        if !beta.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    if beta.iter().all(|v| v.is_finite()) {
        let fitted = z_mul(&beta);
        let obj = pinball_loss(&(0..n).map(|i| y[i] - fitted[i]).collect::<Vec<_>>(), tau);
        if obj < best_obj {
            best_beta = beta;
        }
    }
    IpOutcome {
        beta: best_beta,
        iterations,
        converged,
        rank_deficient,
        gap,
    }
}

/// Exact fit through the `q` observations with the smallest residuals that
/// span the column space.
fn snap_to_vertex(z: &[f64], y: &[f64], n: usize, q: usize, beta: &[f64]) -> Option<Vec<f64>> {
    let mut order: Vec<(f64, usize)> = (0..n)
        .map(|i| ((y[i] - dot(&z[i * q..(i + 1) * q], beta)).abs(), i))
        .collect();
    order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    // Gram-Schmidt over candidate rows keeps the basis well conditioned.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(q);
    let mut chosen = Vec::with_capacity(q);
    for &(_, i) in &order {
        let row = &z[i * q..(i + 1) * q];
        let norm0 = dot(row, row).sqrt();
        let mut v = row.to_vec();
        for u in &basis {
            let c = dot(&v, u);
            for k in 0..q {
                v[k] -= c * u[k];
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 * norm0.max(1e-300) {
            for vk in &mut v {
                *vk /= norm;
            }
            basis.push(v);
            chosen.push(i);
            if chosen.len() == q {
                break;
            }
        }
    }
    if chosen.len() < q {
        return None;
    }
    let m = DMatrix::from_fn(q, q, |r, c| z[chosen[r] * q + c]);
    let rhs = DVector::from_iterator(q, chosen.iter().map(|&i| y[i]));
    let sol = m.lu().solve(&rhs)?;
    sol.iter().all(|v| v.is_finite()).then(|| sol.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinball_examples() {
        assert_eq!(pinball_loss(&[1.0, -1.0], 0.5), 1.0);
        assert!((pinball_loss(&[2.0], 0.9) - 1.8).abs() < 1e-15);
        assert!((pinball_loss(&[-2.0], 0.9) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn intercept_only_median() {
        let x = DesignMatrix::from_row_major(5, 0, vec![]).unwrap();
        let fit = fit_quantile(&x, &[1.0, 2.0, 3.0, 4.0, 100.0], 0.5).unwrap();
        assert_eq!(fit.intercept, 3.0);
    }

    #[test]
    fn flat_optimum_takes_lower_endpoint() {
        let x = DesignMatrix::from_row_major(4, 0, vec![]).unwrap();
        let y = [0.0, 1.0, 2.0, 3.0];
        let fit = fit_quantile(&x, &y, 0.25).unwrap();
        // Candidates are the data points; 0 and 1 tie at 1.5.
        let best = y
            .iter()
            .map(|c| pinball_loss(&y.map(|v| v - c), 0.25))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(best, 1.5);
        assert_eq!(fit.intercept, 0.0);
        assert_eq!(fit.objective, best);
    }

    #[test]
    fn line_with_outliers_recovered() {
        let xs: Vec<f64> = (0..14).map(|i| i as f64).collect();
        let mut y: Vec<f64> = xs.iter().map(|x| 1.5 * x - 2.0).collect();
        y[3] += 40.0;
        y[9] += 25.0;
        let x = DesignMatrix::from_columns(&[xs]).unwrap();
        let fit = fit_quantile(&x, &y, 0.5).unwrap();
        assert!((fit.coefficients[0] - 1.5).abs() < 1e-6, "{fit:?}");
        assert!((fit.intercept + 2.0).abs() < 1e-6);
        assert!(fit.diagnostics.converged);
    }

    #[test]
    fn rank_deficient_reports_not_converged() {
        let c: Vec<f64> = (0..10).map(|i| (i * i % 7) as f64).collect();
        let x = DesignMatrix::from_columns(&[c.clone(), c.iter().map(|v| 2.0 * v).collect()]).unwrap();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let fit = fit_quantile(&x, &y, 0.5).unwrap();
        assert!(!fit.diagnostics.converged);
        assert!(fit.objective.is_finite());
    }

    #[test]
    fn rejects_bad_tau() {
        let x = DesignMatrix::from_row_major(2, 0, vec![]).unwrap();
        assert!(fit_quantile(&x, &[1.0, 2.0], 0.0).is_err());
        assert!(fit_quantile(&x, &[1.0, 2.0], 1.0).is_err());
    }
}
