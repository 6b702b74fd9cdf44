//! Small robust-statistics helpers shared across modules.

use std::cmp::Ordering;

/// Median of a scratch buffer; reorders the slice. Returns NaN when empty.
pub fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid]
            .iter()
            .copied()
            .max_by(f64::total_cmp)
            .unwrap_or(upper);
        0.5 * (lower + upper)
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut buf = values.to_vec();
    median_in_place(&mut buf)
}

/// Median of the finite entries of an iterator.
pub fn median_finite<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut buf: Vec<f64> = values.into_iter().filter(|v| v.is_finite()).collect();
    median_in_place(&mut buf)
}

/// Raw (unscaled) median absolute deviation.
pub fn mad(values: &[f64]) -> f64 {
    let m = median(values);
    let mut dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median_in_place(&mut dev)
}

/// Normal-consistent MAD factor.
pub const MAD_TO_SD: f64 = 1.482_602_218_505_602;

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Pearson correlation; 0 when either side has zero variance or fewer than two points.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return 0.0;
    }
    let mx = mean(&x[..n]);
    let my = mean(&y[..n]);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// Sorted multiset used for sliding-window medians.
#[derive(Debug, Default, Clone)]
pub struct SortedWindow {
    items: Vec<f64>,
}

impl SortedWindow {
    pub fn with_capacity(cap: usize) -> Self {
        Self {
            items: Vec::with_capacity(cap),
        }
    }

    pub fn insert(&mut self, v: f64) {
        let pos = self
            .items
            .partition_point(|x| x.total_cmp(&v) == Ordering::Less);
        self.items.insert(pos, v);
    }

    pub fn remove(&mut self, v: f64) {
        let pos = self
            .items
            .partition_point(|x| x.total_cmp(&v) == Ordering::Less);
        if pos < self.items.len() && self.items[pos].total_cmp(&v) == Ordering::Equal {
            self.items.remove(pos);
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn median(&self) -> f64 {
        let n = self.items.len();
        match n {
            0 => f64::NAN,
            _ if n % 2 == 1 => self.items[n / 2],
            _ => 0.5 * (self.items[n / 2 - 1] + self.items[n / 2]),
        }
    }
}

/// Fill NaN entries by linear interpolation between the nearest finite
/// neighbours, holding the edge values constant. Returns false when no finite
/// value exists.
pub fn interpolate_gaps(values: &mut [f64]) -> bool {
    let known: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_finite()).collect();
    let (Some(&first), Some(&last)) = (known.first(), known.last()) else {
        return false;
    };
    for i in 0..first {
        values[i] = values[first];
    }
    for i in last + 1..values.len() {
        values[i] = values[last];
    }
    for pair in known.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b > a + 1 {
            let (va, vb) = (values[a], values[b]);
            let span = (b - a) as f64;
            for i in a + 1..b {
                let w = (i - a) as f64 / span;
                values[i] = va + w * (vb - va);
            }
        }
    }
    true
}
