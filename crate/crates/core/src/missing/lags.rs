use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a lag set came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LagOrigin {
    Default { periods: Vec<usize>, order: usize },
    User,
}

/// Sorted set of nonzero lags. Lag `l` at row `t` refers to cell `t - l`, so
/// negative lags are leads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagSet {
    lags: Vec<i64>,
    origin: LagOrigin,
}

impl LagSet {
    pub fn new(mut lags: Vec<i64>) -> Result<Self> {
        if lags.contains(&0) {
            return Err(Error::invalid("lag 0 is the target itself"));
        }
        lags.sort_unstable();
        lags.dedup();
        Ok(Self {
            lags,
            origin: LagOrigin::User,
        })
    }

    pub fn lags(&self) -> &[i64] {
        &self.lags
    }

    pub fn origin(&self) -> &LagOrigin {
        &self.origin
    }

    pub fn len(&self) -> usize {
        self.lags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lags.is_empty()
    }

    pub fn max_abs(&self) -> usize {
        self.lags.iter().map(|l| l.unsigned_abs() as usize).max().unwrap_or(0)
    }
}

/// AR order used by the default lag set: 1 for series shorter than twenty of
/// the longest seasonal cycles, 2 otherwise.
pub fn default_ar_order(periods: &[usize], n: usize) -> usize {
    let longest = periods.iter().copied().max().unwrap_or(1);
    if n < 20 * longest {
        1
    } else {
        2
    }
}

/// Lags `1..=p+1` plus, for every period `S`, the lags `j*S + r` with
/// `j = 1..=p` and `r = 0..=p`, minus anything equal to a sum of two or more
/// distinct periods; mirrored to leads.
pub fn lag_set_with_order(periods: &[usize], order: usize) -> LagSet {
    let order = order.max(1);
    let mut positive: Vec<i64> = (1..=order as i64 + 1).collect();
    for &s in periods {
        for j in 1..=order {
            for r in 0..=order {
                positive.push((j * s + r) as i64);
            }
        }
    }
    let cross = cross_seasonal_sums(periods);
    positive.retain(|l| !cross.contains(l));
    positive.sort_unstable();
    positive.dedup();
    let mut lags: Vec<i64> = positive.iter().map(|l| -l).collect();
    lags.extend(&positive);
    lags.sort_unstable();
    LagSet {
        lags,
        origin: LagOrigin::Default {
            periods: periods.to_vec(),
            order,
        },
    }
}

/// The default lag set for a series of length `n`.
pub fn default_lag_set(periods: &[usize], n: usize) -> LagSet {
    lag_set_with_order(periods, default_ar_order(periods, n))
}

fn cross_seasonal_sums(periods: &[usize]) -> Vec<i64> {
    let k = periods.len().min(20);
    let mut sums = Vec::new();
    for mask in 1u32..(1 << k) {
        if mask.count_ones() >= 2 {
            sums.push(
                (0..k)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| periods[i] as i64)
                    .sum(),
            );
        }
    }
    sums
}

/// Progressively smaller default lag sets: lower orders first, then the
/// seasonal groups of the longest periods removed one at a time.
pub(crate) fn reduction_ladder(periods: &[usize], order: usize) -> Vec<LagSet> {
    let mut ladder = Vec::new();
    for p in (1..=order.max(1)).rev() {
        ladder.push(lag_set_with_order(periods, p));
    }
    for keep in (0..periods.len()).rev() {
        ladder.push(lag_set_with_order(&periods[..keep], 1));
    }
    ladder
}
