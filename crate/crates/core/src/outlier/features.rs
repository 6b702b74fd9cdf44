use serde::{Deserialize, Serialize};

use crate::decompose::Decomposition;
use crate::error::{Error, Result};
use crate::stats::{mad, median, median_in_place, std_dev, MAD_TO_SD};

pub const FEATURE_NAMES: [&str; 6] = [
    "gradient",
    "abs_gradient",
    "rel_gradient",
    "seasonal_trend_dev",
    "seasonal_gradient",
    "abs_seasonal_gradient",
];

/// Same-phase neighbours on each side used for the local scale.
pub const DEFAULT_MAD_WINDOW: usize = 10;

/// Mean absolute deviation to SD for Gaussian data.
const MEAN_AD_TO_SD: f64 = 1.253_314_137_315_500_3;

/// Raw and robustly standardized features of one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub n: usize,
    /// The six raw feature columns, in [`FEATURE_NAMES`] order.
    pub raw: Vec<Vec<f64>>,
    /// Indices (into [`FEATURE_NAMES`]) of the columns kept after scaling.
    pub kept: Vec<usize>,
    pub centers: Vec<f64>,
    pub scales: Vec<f64>,
    /// Row-major `n x kept.len()` standardized values.
    pub standardized: Vec<f64>,
}

impl FeatureMatrix {
    pub fn dim(&self) -> usize {
        self.kept.len()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let d = self.dim();
        &self.standardized[t * d..(t + 1) * d]
    }

    pub fn kept_names(&self) -> Vec<&'static str> {
        self.kept.iter().map(|&j| FEATURE_NAMES[j]).collect()
    }

    /// Names of raw columns dropped because they have no spread.
    pub fn dropped_names(&self) -> Vec<&'static str> {
        (0..FEATURE_NAMES.len())
            .filter(|j| !self.kept.contains(j))
            .map(|j| FEATURE_NAMES[j])
            .collect()
    }
}

/// Robust scale of a series: MAD-based SD, else SD, else 1.
pub fn robust_scale(values: &[f64]) -> f64 {
    let s = mad(values) * MAD_TO_SD;
    if s > 0.0 {
        return s;
    }
    let s = std_dev(values);
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

/// The six features of `y`. Each cell's own value comes from `y`, its
/// neighbours from `context`; passing `y` twice gives the plain features.
pub fn raw_features(
    y: &[f64],
    context: &[f64],
    s1: usize,
    decomposition: &Decomposition,
    window: usize,
) -> Vec<Vec<f64>> {
    let n = y.len();
    let delta = 1e-6 * robust_scale(y);
    let mut g = vec![0.0; n];
    let mut a = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut sg = vec![0.0; n];
    let mut asg = vec![0.0; n];
    // With one side missing, the two nearest cells on the other side stand in:
    // half the second difference has the interior's noise variance and
    // vanishes on straight lines, like the two-sided form.
    let two_sided = |t: usize, step: usize| -> f64 {
        let before = (t >= step).then(|| context[t - step]);
        let after = (t + step < n).then(|| context[t + step]);
        match (before, after) {
            (Some(b), Some(f)) => (y[t] - 0.5 * (b + f)).abs(),
            (Some(v), None) if t >= 2 * step => 0.5 * (y[t] - 2.0 * v + context[t - 2 * step]).abs(),
            (None, Some(v)) if t + 2 * step < n => 0.5 * (y[t] - 2.0 * v + context[t + 2 * step]).abs(),
            (Some(v), None) | (None, Some(v)) => (y[t] - v).abs(),
            (None, None) => 0.0,
        }
    };
    let mut phase = Vec::with_capacity(2 * window + 1);
    for t in 0..n {
        if t > 0 {
            g[t] = y[t] - context[t - 1];
        }
        a[t] = two_sided(t, 1);
        phase.clear();
        let lo = t % s1 + s1 * ((t / s1).saturating_sub(window));
        let mut s = lo;
        while s < n && s <= t + window * s1 {
            phase.push(context[s]);
            s += s1;
        }
        let m = median_in_place(&mut phase);
        for v in phase.iter_mut() {
            *v = (*v - m).abs();
        }
        let sigma = median_in_place(&mut phase) * MAD_TO_SD;
        r[t] = a[t] / (sigma + delta);
        d[t] = y[t] - decomposition.deterministic(t);
        if t >= s1 {
            sg[t] = y[t] - context[t - s1];
        }
        asg[t] = two_sided(t, s1);
    }
    vec![g, a, r, d, sg, asg]
}

/// Centers by the median and scales by the MAD-based SD (falling back to the
/// mean absolute deviation); columns without spread are dropped.
pub fn standardize(raw: Vec<Vec<f64>>) -> FeatureMatrix {
    let n = raw.first().map_or(0, Vec::len);
    let mut kept = Vec::new();
    let mut centers = Vec::new();
    let mut scales = Vec::new();
    for (j, col) in raw.iter().enumerate() {
        let c = median(col);
        let mut s = mad(col) * MAD_TO_SD;
        if !(s > 0.0) {
            s = col.iter().map(|v| (v - c).abs()).sum::<f64>() / n.max(1) as f64 * MEAN_AD_TO_SD;
        }
        let magnitude = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if s > 1e-12 * magnitude && s > 0.0 {
            kept.push(j);
            centers.push(c);
            scales.push(s);
        }
    }
    let d = kept.len();
    let mut standardized = Vec::with_capacity(n * d);
    for t in 0..n {
        for (k, &j) in kept.iter().enumerate() {
            standardized.push((raw[j][t] - centers[k]) / scales[k]);
        }
    }
    FeatureMatrix {
        n,
        raw,
        kept,
        centers,
        scales,
        standardized,
    }
}

/// Features of a complete series, standardized.
pub fn compute_features(y: &[f64], s1: usize, decomposition: &Decomposition) -> Result<FeatureMatrix> {
    check_inputs(y, s1, decomposition)?;
    Ok(standardize(raw_features(y, y, s1, decomposition, DEFAULT_MAD_WINDOW)))
}

pub(crate) fn check_inputs(y: &[f64], s1: usize, decomposition: &Decomposition) -> Result<()> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::MissingValuesPresent {
            column: "detection input".into(),
        });
    }
    if s1 < 2 || s1 >= y.len() {
        return Err(Error::InvalidSeasonality(format!(
            "primary period {s1} must be at least 2 and below the series length {}",
            y.len()
        )));
    }
    if decomposition.len() != y.len() {
        return Err(Error::invalid("decomposition length differs from the series"));
    }
    Ok(())
}
