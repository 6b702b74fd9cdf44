//! Outlier detection by Gaussian mixture clustering of six time-series
//! features.
//!
//! Every subset run appends synthetic points drawn from an inflated copy of
//! the feature distribution, fits mixtures over a grid of component counts
//! and covariance families, keeps the best by BIC and scores all
//! observations by their posterior mass on the outlying components.
//! Probabilities are averaged over the runs.

mod features;
mod gmm;
mod hierarchical;

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decompose::{decompose_values, DecomposeOptions};
use crate::error::{Error, Result};
use crate::frame::SeriesFrame;
use crate::rng::{child_seed, rng_for};
use crate::stats::median;

pub use features::{compute_features, raw_features, robust_scale, standardize, FeatureMatrix, DEFAULT_MAD_WINDOW, FEATURE_NAMES};
pub use gmm::{default_floor, fit_gmm_em, mean_and_covariance, CovarianceFamily, MixtureModel, Scorer, EM_TOLERANCE, MAX_EM_ITERATIONS};
pub use hierarchical::{hierarchical_init, MAX_AGGLOMERATION_POINTS};

/// Deviation from the decomposition fit (in robust SDs) beyond which a
/// first-pass flag is treated as contaminating its neighbours' features.
pub const CONTAMINATION_SDS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectOptions {
    pub g_max: usize,
    pub families: Vec<CovarianceFamily>,
    /// Number of subset runs.
    pub subsets: usize,
    pub subset_size: usize,
    /// Synthetic points appended, as a share of the subset.
    pub alpha: f64,
    /// Covariance inflation of the synthetic points.
    pub inflation: f64,
    pub threshold: f64,
    pub seed: u64,
    pub mad_window: usize,
    /// Re-score with flagged neighbours replaced by the decomposition fit.
    pub refine: bool,
    /// A fitted component also counts as outlying when its mean lies this
    /// many robust SDs out in some feature and its members would rather
    /// join the synthetic component than a regular one.
    pub cluster_sds: f64,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            g_max: 5,
            families: CovarianceFamily::ALL.to_vec(),
            subsets: 10,
            subset_size: 5000,
            alpha: 0.05,
            inflation: 25.0,
            threshold: 0.5,
            seed: 0,
            mad_window: DEFAULT_MAD_WINDOW,
            refine: true,
            cluster_sds: 5.0,
        }
    }
}

impl DetectOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return Err(Error::invalid(format!("alpha {} is outside (0, 0.5]", self.alpha)));
        }
        if !(self.inflation > 1.0) {
            return Err(Error::invalid(format!("inflation {} must exceed 1", self.inflation)));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::invalid(format!("threshold {} is outside [0, 1)", self.threshold)));
        }
        if self.g_max < 2 {
            return Err(Error::invalid("g_max must be at least 2"));
        }
        if self.subsets == 0 || self.subset_size < 2 {
            return Err(Error::invalid("need at least one subset of two or more points"));
        }
        if !(self.cluster_sds > 0.0) {
            return Err(Error::invalid("cluster_sds must be positive"));
        }
        if self.families.is_empty() {
            return Err(Error::invalid("no covariance family given"));
        }
        Ok(())
    }
}

/// Synthetic points drawn from `N(mean, c * Cov)` of the given points.
#[derive(Debug, Clone)]
pub struct Augmented {
    /// Original points followed by the synthetic ones (row-major).
    pub points: Vec<f64>,
    pub synthetic: std::ops::Range<usize>,
    pub floor: f64,
}

/// Appends `ceil(alpha * n)` draws from the inflated feature distribution.
pub fn seed_outlier_component<R: rand::Rng>(
    points: &[f64],
    d: usize,
    alpha: f64,
    c: f64,
    rng: &mut R,
) -> Result<Augmented> {
    if !(alpha > 0.0 && alpha <= 0.5) {
        return Err(Error::invalid(format!("alpha {alpha} is outside (0, 0.5]")));
    }
    if !(c > 1.0) {
        return Err(Error::invalid(format!("inflation {c} must exceed 1")));
    }
    let n = points.len() / d;
    let count = (alpha * n as f64).ceil() as usize;
    let (mean, mut cov) = mean_and_covariance(points, d);
    let floor = default_floor(&cov, d);
    gmm::clip_eigenvalues(&mut cov, d, floor);
    for v in &mut cov {
        *v *= c;
    }
    let lower = cholesky_lower(&cov, d);
    let mut out = points.to_vec();
    out.reserve(count * d);
    let mut z = vec![0.0; d];
    for _ in 0..count {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        for i in 0..d {
            let s: f64 = (0..=i).map(|k| lower[i * d + k] * z[k]).sum();
            out.push(mean[i] + s);
        }
    }
    Ok(Augmented {
        points: out,
        synthetic: n..n + count,
        floor,
    })
}

fn cholesky_lower(c: &[f64], d: usize) -> Vec<f64> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = c[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = if i == j {
                s.max(0.0).sqrt()
            } else if l[j * d + j] > 0.0 {
                s / l[j * d + j]
            } else {
                0.0
            };
        }
    }
    l
}

/// Selected mixture of one subset run with its outlying components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunModel {
    pub model: MixtureModel,
    /// Component holding most synthetic points.
    pub synthetic_component: usize,
    /// All components scored as outlying (includes the synthetic one).
    pub outlying: Vec<usize>,
    /// Weighted mean of the regular components.
    pub regular_mean: Vec<f64>,
    pub subset_size: usize,
}

impl RunModel {
    /// Posterior mass of the outlying components at `x`.
    pub fn outlier_probability(&self, scorer: &Scorer<'_>, x: &[f64], post: &mut [f64]) -> f64 {
        scorer.posteriors(x, post);
        self.outlying.iter().map(|&k| post[k]).sum::<f64>().clamp(0.0, 1.0)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..v.len() {
        if v[k] > v[best] {
            best = k;
        }
    }
    best
}

/// The synthetic-majority component, plus every component far from the
/// centre (see [`DetectOptions::cluster_sds`]) whose real members would mostly
/// move to it rather than to an already regular component. Components are
/// examined by decreasing weight; the heaviest non-synthetic one is regular.
fn identify_outlying(
    model: &MixtureModel,
    points: &[f64],
    synthetic: std::ops::Range<usize>,
    cluster_sds: f64,
) -> (usize, Vec<usize>) {
    let d = model.dim;
    let g = model.components();
    let scorer = model.scorer();
    let n = points.len() / d;
    let mut post = vec![0.0; g];
    let mut labels = Vec::with_capacity(n);
    let mut synth_counts = vec![0usize; g];
    for i in 0..n {
        scorer.posteriors(&points[i * d..(i + 1) * d], &mut post);
        let l = argmax(&post);
        if synthetic.contains(&i) {
            synth_counts[l] += 1;
        }
        labels.push(l);
    }
    let top = *synth_counts.iter().max().expect("components");
    let candidates: Vec<usize> = (0..g).filter(|&k| synth_counts[k] == top).collect();
    let synthetic_component = if candidates.len() == 1 {
        candidates[0]
    } else {
        *candidates
            .iter()
            .max_by(|&&a, &&b| model.determinant(a).total_cmp(&model.determinant(b)).then(b.cmp(&a)))
            .expect("candidate")
    };

    let mut order: Vec<usize> = (0..g).filter(|&k| k != synthetic_component).collect();
    order.sort_by(|&a, &b| model.weights[b].total_cmp(&model.weights[a]).then(a.cmp(&b)));
    let mut outlying = vec![synthetic_component];
    let mut regular: Vec<usize> = Vec::new();
    for &k in &order {
        let remote = model.means[k].iter().any(|m| m.abs() > cluster_sds);
        if regular.is_empty() || !remote {
            regular.push(k);
            continue;
        }
        let mut to_synthetic = 0usize;
        let mut members = 0usize;
        for i in (0..synthetic.start).filter(|&i| labels[i] == k) {
            members += 1;
            scorer.posteriors(&points[i * d..(i + 1) * d], &mut post);
            let best_regular = regular.iter().map(|&r| post[r]).fold(0.0, f64::max);
            if post[synthetic_component] > best_regular {
                to_synthetic += 1;
            }
        }
        if members > 0 && 2 * to_synthetic > members {
            outlying.push(k);
        } else {
            regular.push(k);
        }
    }
    outlying.sort_unstable();
    (synthetic_component, outlying)
}

fn regular_mean(model: &MixtureModel, outlying: &[usize]) -> Vec<f64> {
    let mut mean = vec![0.0; model.dim];
    let mut total = 0.0;
    for k in (0..model.components()).filter(|k| !outlying.contains(k)) {
        total += model.weights[k];
        for j in 0..model.dim {
            mean[j] += model.weights[k] * model.means[k][j];
        }
    }
    if total > 0.0 {
        for v in &mut mean {
            *v /= total;
        }
    }
    mean
}

/// One subset run: sample, augment, fit the grid, keep the best BIC.
fn subset_run(features: &FeatureMatrix, options: &DetectOptions, run: usize) -> Result<RunModel> {
    let d = features.dim();
    let n = features.n;
    let mut rng = rng_for(child_seed(options.seed, run as u64), 0x6f75_746c);
    let size = options.subset_size.min(n);
    let mut idx = sample(&mut rng, n, size).into_vec();
    idx.sort_unstable();
    let mut pts = Vec::with_capacity(size * d);
    for &t in &idx {
        pts.extend_from_slice(features.row(t));
    }
    let aug = seed_outlier_component(&pts, d, options.alpha, options.inflation, &mut rng)?;
    let total = aug.points.len() / d;
    let mut best: Option<MixtureModel> = None;
    for g in 2..=options.g_max {
        if total < 2 * g {
            break;
        }
        let init = hierarchical_init(&aug.points, d, g)?;
        for &family in &options.families {
            let fit = fit_gmm_em(&aug.points, d, g, family, &init, aug.floor)?;
            if fit.components() < 2 {
                continue;
            }
            if best.as_ref().map_or(true, |b| fit.bic() > b.bic()) {
                best = Some(fit);
            }
        }
    }
    let model = best.ok_or_else(|| Error::invalid("no mixture with two or more components could be fitted"))?;
    let (synthetic_component, outlying) = identify_outlying(&model, &aug.points, aug.synthetic.clone(), options.cluster_sds);
    let regular_mean = regular_mean(&model, &outlying);
    Ok(RunModel {
        model,
        synthetic_component,
        outlying,
        regular_mean,
        subset_size: size,
    })
}

/// Mean outlier probability of every row over the run models.
fn score(features: &FeatureMatrix, runs: &[RunModel]) -> Vec<f64> {
    let n = features.n;
    let mut probs = vec![0.0; n];
    for run in runs {
        let scorer = run.model.scorer();
        let mut post = vec![0.0; run.model.components()];
        for (t, p) in probs.iter_mut().enumerate() {
            *p += run.outlier_probability(&scorer, features.row(t), &mut post);
        }
    }
    for p in &mut probs {
        *p /= runs.len() as f64;
    }
    probs
}

/// Summary of one subset run for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub family: CovarianceFamily,
    pub components: usize,
    pub bic: f64,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub synthetic_component: usize,
    pub outlying_components: Vec<usize>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub column: String,
    pub probabilities: Vec<f64>,
    pub threshold: f64,
    pub flagged: Vec<usize>,
    /// Feature names (or `a+b` pairs, or `joint`) explaining each flag.
    pub causes: BTreeMap<usize, Vec<String>>,
    /// Number of subset fits that scored each row.
    pub subset_counts: Vec<usize>,
    pub features: Vec<String>,
    pub dropped_features: Vec<String>,
    /// Flags of the first pass, before neighbours were cleaned.
    pub first_pass_flagged: Vec<usize>,
    pub runs: Vec<RunSummary>,
}

impl OutlierReport {
    /// A report that flags nothing.
    pub fn empty(column: &str, n: usize, threshold: f64) -> Self {
        Self {
            column: column.to_string(),
            probabilities: vec![0.0; n],
            threshold,
            flagged: Vec::new(),
            causes: BTreeMap::new(),
            subset_counts: vec![0; n],
            features: Vec::new(),
            dropped_features: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            first_pass_flagged: Vec::new(),
            runs: Vec::new(),
        }
    }
}

/// Full detection output.
#[derive(Debug, Clone)]
pub struct Detection {
    pub report: OutlierReport,
    pub features: FeatureMatrix,
    pub runs: Vec<RunModel>,
}

impl Detection {
    /// The model of the last subset run.
    pub fn last_model(&self) -> Option<&MixtureModel> {
        self.runs.last().map(|r| &r.model)
    }
}

fn run_all(features: &FeatureMatrix, options: &DetectOptions) -> Result<Vec<RunModel>> {
    (0..options.subsets)
        .into_par_iter()
        .map(|r| subset_run(features, options, r))
        .collect()
}

/// For each flagged row, the smallest sets of features (singles, then pairs)
/// whose shift to the regular mean brings the averaged probability to or
/// below the threshold; `joint` when none does.
pub fn attribute_causes(
    runs: &[RunModel],
    features: &FeatureMatrix,
    flagged: &[usize],
    threshold: f64,
) -> BTreeMap<usize, Vec<String>> {
    let d = features.dim();
    let names = features.kept_names();
    let scorers: Vec<Scorer<'_>> = runs.iter().map(|r| r.model.scorer()).collect();
    let mut post = vec![0.0; runs.iter().map(|r| r.model.components()).max().unwrap_or(0)];
    let mut shifted_prob = |x: &[f64], set: &[usize]| -> f64 {
        let mut total = 0.0;
        for (run, scorer) in runs.iter().zip(&scorers) {
            let mut y = x.to_vec();
            for &j in set {
                y[j] = run.regular_mean[j];
            }
            total += run.outlier_probability(scorer, &y, &mut post[..run.model.components()]);
        }
        total / runs.len() as f64
    };
    let mut causes = BTreeMap::new();
    for &t in flagged {
        let x = features.row(t);
        let singles: Vec<String> = (0..d)
            .filter(|&j| shifted_prob(x, &[j]) <= threshold)
            .map(|j| names[j].to_string())
            .collect();
        let found = if !singles.is_empty() {
            singles
        } else {
            let mut pairs = Vec::new();
            for a in 0..d {
                for b in a + 1..d {
                    if shifted_prob(x, &[a, b]) <= threshold {
                        pairs.push(format!("{}+{}", names[a], names[b]));
                    }
                }
            }
            if pairs.is_empty() {
                vec!["joint".to_string()]
            } else {
                pairs
            }
        };
        causes.insert(t, found);
    }
    causes
}

/// Detects outliers in a complete series with seasonal periods `periods`
/// (primary period `s1`).
///
/// With `options.refine`, a second pass re-decomposes the series with the
/// first-pass flags masked. Flagged cells that sit more than
/// [`CONTAMINATION_SDS`] robust SDs off the new fit are replaced by it when
/// they serve as neighbours, and all features are recomputed, so cells next
/// to a gross anomaly are judged against clean context. Each cell keeps its
/// own observed value.
pub fn detect_outliers_values(
    name: &str,
    y: &[f64],
    periods: &[usize],
    s1: usize,
    options: &DetectOptions,
) -> Result<Detection> {
    options.validate()?;
    let n = y.len();
    let decompose = DecomposeOptions::default();
    let decomposition = decompose_values(y, periods, &[], &decompose)?;
    features::check_inputs(y, s1, &decomposition)?;
    let mut features = standardize(raw_features(y, y, s1, &decomposition, options.mad_window));
    if features.dim() == 0 {
        let mut report = OutlierReport::empty(name, n, options.threshold);
        report.subset_counts = vec![options.subsets; n];
        return Ok(Detection {
            report,
            features,
            runs: Vec::new(),
        });
    }
    let mut runs = run_all(&features, options)?;
    let mut probabilities = score(&features, &runs);
    let first_pass: Vec<usize> = (0..n).filter(|&t| probabilities[t] > options.threshold).collect();
    if options.refine && !first_pass.is_empty() && 2 * first_pass.len() < n {
        let mut masked = y.to_vec();
        for &t in &first_pass {
            masked[t] = f64::NAN;
        }
        let cleaned = decompose_values(&masked, periods, &[], &decompose)?;
        let deviation: Vec<f64> = (0..n).map(|t| y[t] - cleaned.fitted(t)).collect();
        let center = median(&deviation);
        let scale = robust_scale(&deviation);
        let mut context = y.to_vec();
        for &t in &first_pass {
            if (deviation[t] - center).abs() > CONTAMINATION_SDS * scale {
                context[t] = cleaned.fitted(t);
            }
        }
        let refined = standardize(raw_features(y, &context, s1, &cleaned, options.mad_window));
        if refined.dim() > 0 {
            features = refined;
            runs = run_all(&features, options)?;
            probabilities = score(&features, &runs);
        }
    }
    let flagged: Vec<usize> = (0..n).filter(|&t| probabilities[t] > options.threshold).collect();
    let causes = attribute_causes(&runs, &features, &flagged, options.threshold);
    let report = OutlierReport {
        column: name.to_string(),
        probabilities,
        threshold: options.threshold,
        flagged,
        causes,
        subset_counts: vec![runs.len(); n],
        features: features.kept_names().iter().map(|s| s.to_string()).collect(),
        dropped_features: features.dropped_names().iter().map(|s| s.to_string()).collect(),
        first_pass_flagged: first_pass,
        runs: runs
            .iter()
            .map(|r| RunSummary {
                family: r.model.family,
                components: r.model.components(),
                bic: r.model.bic(),
                loglik: r.model.loglik,
                iterations: r.model.iterations,
                converged: r.model.converged,
                synthetic_component: r.synthetic_component,
                outlying_components: r.outlying.clone(),
                weights: r.model.weights.clone(),
            })
            .collect(),
    };
    Ok(Detection {
        report,
        features,
        runs,
    })
}

/// Detects outliers in series `col` of a frame without missing values,
/// using the frame's primary seasonality unless `s1` is given.
pub fn detect_outliers(
    frame: &SeriesFrame,
    col: usize,
    s1: Option<usize>,
    options: &DetectOptions,
) -> Result<Detection> {
    let series = frame
        .columns()
        .get(col)
        .ok_or_else(|| Error::UnknownColumn(format!("#{col}")))?;
    if series.missing_count() > 0 {
        return Err(Error::MissingValuesPresent {
            column: series.name().to_string(),
        });
    }
    let periods = frame.seasonalities().periods();
    let s1 = s1
        .or_else(|| periods.first().copied())
        .ok_or_else(|| Error::InvalidSeasonality("detection needs a primary period".into()))?;
    detect_outliers_values(series.name(), series.values(), periods, s1, options)
}
