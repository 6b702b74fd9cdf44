//! Finite Gaussian mixtures fitted by EM.
//!
//! Covariance estimates are constrained to eigenvalues of at least `floor`.
//! The constrained M-step (eigenvalue clipping of the weighted scatter
//! matrix, or clipping of the variances for the restricted families) is the
//! exact maximiser under that constraint, so the log-likelihood stays
//! non-decreasing.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
pub const MAX_EM_ITERATIONS: usize = 500;
pub const EM_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceFamily {
    /// `σ²_k I`
    Spherical,
    /// `diag(σ²_k1, …, σ²_kd)`
    Diagonal,
    Full,
}

impl CovarianceFamily {
    pub const ALL: [CovarianceFamily; 3] = [
        CovarianceFamily::Spherical,
        CovarianceFamily::Diagonal,
        CovarianceFamily::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CovarianceFamily::Spherical => "spherical",
            CovarianceFamily::Diagonal => "diagonal",
            CovarianceFamily::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "spherical" => Ok(Self::Spherical),
            "diagonal" => Ok(Self::Diagonal),
            "full" => Ok(Self::Full),
            other => Err(Error::invalid(format!("unknown covariance family {other:?}"))),
        }
    }

    /// Free covariance parameters of one component in dimension `d`.
    fn covariance_params(self, d: usize) -> usize {
        match self {
            CovarianceFamily::Spherical => 1,
            CovarianceFamily::Diagonal => d,
            CovarianceFamily::Full => d * (d + 1) / 2,
        }
    }
}

/// A fitted mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub family: CovarianceFamily,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major `dim x dim` covariance per component.
    pub covariances: Vec<Vec<f64>>,
    pub loglik: f64,
    /// Log-likelihood after every E-step of the final EM run.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Components dropped because their weight fell below `1/n`.
    pub removed_components: usize,
    pub n_points: usize,
    pub floor: f64,
}

/// Cholesky factor and normalising constant of one component.
#[derive(Debug, Clone)]
struct Factor {
    lower: Vec<f64>,
    log_norm: f64,
}

fn factorize(cov: &[f64], d: usize) -> Factor {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = cov[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                l[i * d + i] = s.max(f64::MIN_POSITIVE).sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    let log_det: f64 = (0..d).map(|i| 2.0 * l[i * d + i].ln()).sum();
    Factor {
        lower: l,
        log_norm: -0.5 * (d as f64 * LN_2PI + log_det),
    }
}

impl Factor {
    fn log_density(&self, x: &[f64], mean: &[f64], scratch: &mut [f64]) -> f64 {
        let d = mean.len();
        let mut q = 0.0;
        for i in 0..d {
            let mut s = x[i] - mean[i];
            for k in 0..i {
                s -= self.lower[i * d + k] * scratch[k];
            }
            let z = s / self.lower[i * d + i];
            scratch[i] = z;
            q += z * z;
        }
        self.log_norm - 0.5 * q
    }
}

/// Evaluates component posteriors of a fitted mixture.
#[derive(Debug, Clone)]
pub struct Scorer<'a> {
    model: &'a MixtureModel,
    factors: Vec<Factor>,
    log_weights: Vec<f64>,
}

impl<'a> Scorer<'a> {
    pub fn new(model: &'a MixtureModel) -> Self {
        Self {
            factors: model
                .covariances
                .iter()
                .map(|c| factorize(c, model.dim))
                .collect(),
            log_weights: model.weights.iter().map(|w| w.ln()).collect(),
            model,
        }
    }

    /// Writes the posterior of every component into `post`; returns the log
    /// mixture density at `x`.
    pub fn posteriors(&self, x: &[f64], post: &mut [f64]) -> f64 {
        let mut scratch = vec![0.0; self.model.dim];
        let mut max = f64::NEG_INFINITY;
        for k in 0..self.factors.len() {
            post[k] = self.log_weights[k]
                + self.factors[k].log_density(x, &self.model.means[k], &mut scratch);
            max = max.max(post[k]);
        }
        let mut total = 0.0;
        for p in post.iter_mut() {
            *p = (*p - max).exp();
            total += *p;
        }
        for p in post.iter_mut() {
            *p /= total;
        }
        max + total.ln()
    }
}

impl MixtureModel {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    /// Number of free parameters.
    pub fn parameter_count(&self) -> usize {
        let g = self.components();
        g - 1 + g * self.dim + g * self.family.covariance_params(self.dim)
    }

    /// `2 loglik - df log(n)`; larger is better.
    pub fn bic(&self) -> f64 {
        2.0 * self.loglik - self.parameter_count() as f64 * (self.n_points as f64).ln()
    }

    pub fn determinant(&self, k: usize) -> f64 {
        let f = factorize(&self.covariances[k], self.dim);
        (-2.0 * f.log_norm - self.dim as f64 * LN_2PI).exp()
    }

    pub fn scorer(&self) -> Scorer<'_> {
        Scorer::new(self)
    }
}

struct Params {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covs: Vec<Vec<f64>>,
}

/// Weighted mean and scatter of all points under responsibilities `resp`
/// (row-major `n x g`), constrained to `family` with eigenvalues ≥ floor.
fn m_step(points: &[f64], d: usize, resp: &[f64], g: usize, family: CovarianceFamily, floor: f64) -> Params {
    let n = points.len() / d;
    let mut mass = vec![0.0; g];
    let mut means = vec![vec![0.0; d]; g];
    for i in 0..n {
        let x = &points[i * d..(i + 1) * d];
        for k in 0..g {
            let r = resp[i * g + k];
            mass[k] += r;
            for j in 0..d {
                means[k][j] += r * x[j];
            }
        }
    }
    for k in 0..g {
        for v in means[k].iter_mut() {
            *v /= mass[k].max(f64::MIN_POSITIVE);
        }
    }
    let mut covs = vec![vec![0.0; d * d]; g];
    let mut diff = vec![0.0; d];
    for i in 0..n {
        let x = &points[i * d..(i + 1) * d];
        for k in 0..g {
            let r = resp[i * g + k];
            if r == 0.0 {
                continue;
            }
            for j in 0..d {
                diff[j] = x[j] - means[k][j];
            }
            let c = &mut covs[k];
            for a in 0..d {
                let ra = r * diff[a];
                for b in 0..=a {
                    c[a * d + b] += ra * diff[b];
                }
            }
        }
    }
    for k in 0..g {
        let c = &mut covs[k];
        let m = mass[k].max(f64::MIN_POSITIVE);
        for a in 0..d {
            for b in 0..=a {
                c[a * d + b] /= m;
                c[b * d + a] = c[a * d + b];
            }
        }
        constrain(c, d, family, floor);
    }
    let total: f64 = mass.iter().sum();
    Params {
        weights: mass.iter().map(|m| m / total).collect(),
        means,
        covs,
    }
}

fn constrain(c: &mut [f64], d: usize, family: CovarianceFamily, floor: f64) {
    match family {
        CovarianceFamily::Spherical => {
            let v = ((0..d).map(|j| c[j * d + j]).sum::<f64>() / d as f64).max(floor);
            c.iter_mut().for_each(|x| *x = 0.0);
            for j in 0..d {
                c[j * d + j] = v;
            }
        }
        CovarianceFamily::Diagonal => {
            for a in 0..d {
                for b in 0..d {
                    if a != b {
                        c[a * d + b] = 0.0;
                    }
                }
                c[a * d + a] = c[a * d + a].max(floor);
            }
        }
        CovarianceFamily::Full => clip_eigenvalues(c, d, floor),
    }
}

/// Replaces `c` by `Q max(Λ, floor) Qᵀ`.
pub(crate) fn clip_eigenvalues(c: &mut [f64], d: usize, floor: f64) {
    let m = DMatrix::from_row_slice(d, d, c);
    let eig = SymmetricEigen::new(m);
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return;
    }
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let q = &eig.eigenvectors;
    let rebuilt = q * DMatrix::from_diagonal(&clipped) * q.transpose();
    for a in 0..d {
        for b in 0..d {
            c[a * d + b] = 0.5 * (rebuilt[(a, b)] + rebuilt[(b, a)]);
        }
    }
}

/// E-step: fills `resp` and returns the log-likelihood.
fn e_step(points: &[f64], d: usize, params: &Params, resp: &mut [f64]) -> f64 {
    let g = params.weights.len();
    let factors: Vec<Factor> = params.covs.iter().map(|c| factorize(c, d)).collect();
    let log_w: Vec<f64> = params.weights.iter().map(|w| w.ln()).collect();
    let n = points.len() / d;
    let mut scratch = vec![0.0; d];
    let mut ll = 0.0;
    for i in 0..n {
        let x = &points[i * d..(i + 1) * d];
        let row = &mut resp[i * g..(i + 1) * g];
        let mut max = f64::NEG_INFINITY;
        for k in 0..g {
            row[k] = log_w[k] + factors[k].log_density(x, &params.means[k], &mut scratch);
            max = max.max(row[k]);
        }
        let mut total = 0.0;
        for r in row.iter_mut() {
            *r = (*r - max).exp();
            total += *r;
        }
        for r in row.iter_mut() {
            *r /= total;
        }
        ll += max + total.ln();
    }
    ll
}

/// Fits a `g`-component mixture by EM, starting from the hard partition
/// `init`. Components whose weight drops below `1/n` are removed and the fit
/// restarts with the remaining ones.
pub fn fit_gmm_em(
    points: &[f64],
    d: usize,
    g: usize,
    family: CovarianceFamily,
    init: &[usize],
    floor: f64,
) -> Result<MixtureModel> {
    if d == 0 {
        return Err(Error::invalid("mixture fit needs at least one feature"));
    }
    let n = points.len() / d;
    if g == 0 || n < 2 * g {
        return Err(Error::invalid(format!(
            "{n} points are too few for {g} components"
        )));
    }
    if init.len() != n || init.iter().any(|&l| l >= g) {
        return Err(Error::invalid("initial partition does not match the points"));
    }
    if !(floor > 0.0) {
        return Err(Error::invalid("variance floor must be positive"));
    }
    let mut resp = vec![0.0; n * g];
    for (i, &l) in init.iter().enumerate() {
        resp[i * g + l] = 1.0;
    }
    let mut g = g;
    let mut removed = 0;
    // Empty initial groups are removed up front.
    let mut params = m_step(points, d, &resp, g, family, floor);
    loop {
        let small: Vec<usize> = (0..g).filter(|&k| params.weights[k] * (n as f64) < 1.0).collect();
        if small.is_empty() || g - small.len() == 0 {
            break;
        }
        drop_components(&mut params, &small);
        g -= small.len();
        removed += small.len();
        resp = vec![0.0; n * g];
        e_step(points, d, &params, &mut resp);
        params = m_step(points, d, &resp, g, family, floor);
    }

    let mut resp = vec![0.0; n * g];
    let mut trace = vec![e_step(points, d, &params, &mut resp)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_EM_ITERATIONS {
        iterations += 1;
        let next = m_step(points, d, &resp, g, family, floor);
        let small: Vec<usize> = (0..g).filter(|&k| next.weights[k] * (n as f64) < 1.0).collect();
        if !small.is_empty() && small.len() < g {
            params = next;
            drop_components(&mut params, &small);
            g -= small.len();
            removed += small.len();
            resp = vec![0.0; n * g];
            trace = vec![e_step(points, d, &params, &mut resp)];
            continue;
        }
        params = next;
        let ll = e_step(points, d, &params, &mut resp);
        let prev = *trace.last().expect("trace");
        trace.push(ll);
        if (ll - prev).abs() < EM_TOLERANCE * ll.abs() {
            converged = true;
            break;
        }
    }
    Ok(MixtureModel {
        family,
        dim: d,
        weights: params.weights,
        means: params.means,
        covariances: params.covs,
        loglik: *trace.last().expect("trace"),
        loglik_trace: trace,
        iterations,
        converged,
        removed_components: removed,
        n_points: n,
        floor,
    })
}

fn drop_components(params: &mut Params, drop: &[usize]) {
    let keep: Vec<usize> = (0..params.weights.len()).filter(|k| !drop.contains(k)).collect();
    params.weights = keep.iter().map(|&k| params.weights[k]).collect();
    params.means = keep.iter().map(|&k| params.means[k].clone()).collect();
    params.covs = keep.iter().map(|&k| params.covs[k].clone()).collect();
    let total: f64 = params.weights.iter().sum();
    for w in &mut params.weights {
        *w /= total;
    }
}

/// Sample mean and covariance of row-major points.
pub fn mean_and_covariance(points: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = points.len() / d;
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            mean[j] += points[i * d + j];
        }
    }
    for v in &mut mean {
        *v /= n.max(1) as f64;
    }
    let mut cov = vec![0.0; d * d];
    for i in 0..n {
        for a in 0..d {
            let da = points[i * d + a] - mean[a];
            for b in 0..=a {
                cov[a * d + b] += da * (points[i * d + b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in 0..=a {
            cov[a * d + b] /= n.max(1) as f64;
            cov[b * d + a] = cov[a * d + b];
        }
    }
    (mean, cov)
}

/// Default variance floor: `1e-8` of the average variance.
pub fn default_floor(cov: &[f64], d: usize) -> f64 {
    let trace: f64 = (0..d).map(|j| cov[j * d + j]).sum();
    let f = 1e-8 * trace / d as f64;
    if f > 0.0 {
        f
    } else {
        1e-12
    }
}
