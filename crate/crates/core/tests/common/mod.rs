//! Reference computations written independently of the library, plus small
//! data generators shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn check_loss(rows: &[Vec<f64>], y: &[f64], tau: f64, intercept: f64, slopes: &[f64]) -> f64 {
    rows.iter()
        .zip(y)
        .map(|(r, &yi)| {
            let u = yi - intercept - r.iter().zip(slopes).map(|(a, b)| a * b).sum::<f64>();
            if u < 0.0 {
                (tau - 1.0) * u
            } else {
                tau * u
            }
        })
        .sum()
}

/// Gaussian elimination with partial pivoting; `None` when singular.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let k = b.len();
    for c in 0..k {
        let piv = (c..k).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-12 {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..k {
            let f = a[r][c] / a[c][c];
            for j in c..k {
                a[r][j] -= f * a[c][j];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; k];
    for c in (0..k).rev() {
        let s: f64 = (c + 1..k).map(|j| a[c][j] * x[j]).sum();
        x[c] = (b[c] - s) / a[c][c];
    }
    Some(x)
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Smallest check loss over every hyperplane through `p + 1` observations.
/// For a full-rank design one of these vertices is optimal.
pub fn quantile_by_enumeration(rows: &[Vec<f64>], y: &[f64], tau: f64) -> f64 {
    let p = rows.first().map_or(0, Vec::len);
    let k = p + 1;
    let mut best = f64::INFINITY;
    for s in subsets(y.len(), k) {
        let a: Vec<Vec<f64>> = s
            .iter()
            .map(|&i| std::iter::once(1.0).chain(rows[i].iter().copied()).collect())
            .collect();
        let b: Vec<f64> = s.iter().map(|&i| y[i]).collect();
        if let Some(sol) = solve_dense(a, b) {
            best = best.min(check_loss(rows, y, tau, sol[0], &sol[1..]));
        }
    }
    best
}

/// Smallest `q` with `#{y <= q} / n >= tau`: the lower end of the minimisers
/// of `Σ ρ_τ(yᵢ − q)`.
pub fn lower_empirical_quantile(y: &[f64], tau: f64) -> f64 {
    let mut s = y.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    for &q in &s {
        let count = s.iter().filter(|&&v| v <= q).count() as f64;
        if count / n >= tau {
            return q;
        }
    }
    *s.last().unwrap()
}

fn weighted_moments(v: &[f64], w: &[f64]) -> (f64, f64) {
    let total: f64 = w.iter().sum();
    let mean = v.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total;
    let var = v.iter().zip(w).map(|(a, b)| b * (a - mean).powi(2)).sum::<f64>() / total;
    (mean, var.sqrt())
}

/// Subgradient violation of a lasso solution for
/// `1/2 Σ vᵢ (ỹᵢ − x̃ᵢβ̃)² + λ Σ|β̃ⱼ|` with `vᵢ = wᵢ/Σw` and weighted
/// standardization, recomputed from raw columns. Also folds in the
/// unpenalized intercept condition `Σ vᵢ rᵢ = 0`.
pub fn lasso_kkt(cols: &[Vec<f64>], y: &[f64], w: &[f64], intercept: f64, coefs: &[f64], lambda: f64) -> f64 {
    let n = y.len();
    let total: f64 = w.iter().sum();
    let (_, ysd) = weighted_moments(y, w);
    if ysd == 0.0 {
        return 0.0;
    }
    let stats: Vec<(f64, f64)> = cols.iter().map(|c| weighted_moments(c, w)).collect();
    let resid: Vec<f64> = (0..n)
        .map(|i| {
            let fit = intercept + cols.iter().zip(coefs).map(|(c, b)| c[i] * b).sum::<f64>();
            (y[i] - fit) / ysd
        })
        .collect();
    let mut worst = (0..n).map(|i| w[i] / total * resid[i]).sum::<f64>().abs();
    for (j, c) in cols.iter().enumerate() {
        let (m, sd) = stats[j];
        if sd <= 1e-12 * m.abs().max(1.0) {
            worst = worst.max(coefs[j].abs());
            continue;
        }
        let g: f64 = (0..n).map(|i| w[i] / total * (c[i] - m) / sd * resid[i]).sum();
        let b = coefs[j] * sd / ysd;
        let v = if b == 0.0 {
            (g.abs() - lambda).max(0.0)
        } else {
            (g - lambda * b.signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Ordinary least squares with intercept, `[b0, b1, ...]`.
pub fn ols(cols: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = cols.len() + 1;
    let col = |j: usize, i: usize| if j == 0 { 1.0 } else { cols[j - 1][i] };
    let a: Vec<Vec<f64>> = (0..k)
        .map(|r| (0..k).map(|c| (0..y.len()).map(|i| col(r, i) * col(c, i)).sum()).collect())
        .collect();
    let b: Vec<f64> = (0..k).map(|r| (0..y.len()).map(|i| col(r, i) * y[i]).sum()).collect();
    solve_dense(a, b).expect("full rank")
}

/// AR(1) noise around a daily sine.
pub fn ar_seasonal(n: usize, period: usize, phi: f64, amplitude: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut e = normal.sample(&mut r) / (1.0 - phi * phi).sqrt();
    (0..n)
        .map(|t| {
            if t > 0 {
                e = phi * e + normal.sample(&mut r);
            }
            50.0 + amplitude * (2.0 * std::f64::consts::PI * t as f64 / period as f64).sin() + e
        })
        .collect()
}

/// Two isotropic Gaussian blobs in `d` dimensions, `n` points each, centres
/// `sep` apart along every axis. Row-major.
pub fn two_blobs(n: usize, d: usize, sep: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut out = Vec::with_capacity(2 * n * d);
    for blob in 0..2 {
        for _ in 0..n {
            for _ in 0..d {
                out.push(blob as f64 * sep + normal.sample(&mut r));
            }
        }
    }
    out
}

/// Marks `share` of the interior cells missing at random.
pub fn punch_holes(y: &[f64], share: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    y.iter()
        .enumerate()
        .map(|(t, &v)| {
            if t > 0 && t + 1 < y.len() && r.random::<f64>() < share {
                f64::NAN
            } else {
                v
            }
        })
        .collect()
}

pub fn mean_abs_error(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64
}
