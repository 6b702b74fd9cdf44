//! Time-series container, missing-value semantics and CSV ingestion.
//!
//! A [`SeriesFrame`] holds `m` equally long series on a regular time grid.
//! Missing cells are stored as NaN, but the per-series boolean mask is the
//! authoritative record. Cells re-coded as missing by [`apply_missing_spec`]
//! keep their original value for auditing.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rendering details remembered from the input so timestamps are written back
/// the way they were read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DateFormat {
    pub separator: char,
    pub seconds: bool,
    pub zulu: bool,
    pub date_only: bool,
}

impl Default for DateFormat {
    fn default() -> Self {
        Self {
            separator: 'T',
            seconds: true,
            zulu: false,
            date_only: false,
        }
    }
}

/// Regular time grid: `start + i * step` for `i` in `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeIndex {
    Integer {
        start: i64,
        step: i64,
    },
    DateTime {
        start: NaiveDateTime,
        step_seconds: i64,
        format: DateFormat,
    },
}

impl Default for TimeIndex {
    fn default() -> Self {
        TimeIndex::Integer { start: 0, step: 1 }
    }
}

impl TimeIndex {
    pub fn label(&self, i: usize) -> String {
        match self {
            TimeIndex::Integer { start, step } => (start + step * i as i64).to_string(),
            TimeIndex::DateTime {
                start,
                step_seconds,
                format,
            } => {
                let ts = *start + TimeDelta::seconds(step_seconds * i as i64);
                if format.date_only {
                    return ts.format("%Y-%m-%d").to_string();
                }
                let pattern = match (format.separator, format.seconds) {
                    ('T', true) => "%Y-%m-%dT%H:%M:%S",
                    ('T', false) => "%Y-%m-%dT%H:%M",
                    (_, true) => "%Y-%m-%d %H:%M:%S",
                    (_, false) => "%Y-%m-%d %H:%M",
                };
                let mut s = ts.format(pattern).to_string();
                if format.zulu {
                    s.push('Z');
                }
                s
            }
        }
    }
}

/// Sorted, duplicate-free seasonal periods in observation counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seasonalities(Vec<usize>);

impl Seasonalities {
    pub fn new(mut periods: Vec<usize>) -> Result<Self> {
        periods.sort_unstable();
        periods.dedup();
        if let Some(&p) = periods.iter().find(|&&p| p < 2) {
            return Err(Error::InvalidSeasonality(format!(
                "period {p} is below 2"
            )));
        }
        Ok(Self(periods))
    }

    pub fn periods(&self) -> &[usize] {
        &self.0
    }

    pub fn primary(&self) -> Option<usize> {
        self.0.first().copied()
    }

    pub fn max(&self) -> Option<usize> {
        self.0.last().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn check_length(&self, n: usize) -> Result<()> {
        match self.max() {
            Some(p) if p >= n => Err(Error::InvalidSeasonality(format!(
                "period {p} is not shorter than the series ({n} observations)"
            ))),
            _ => Ok(()),
        }
    }
}

/// One named series with its missing mask.
#[derive(Debug, Clone)]
pub struct Series {
    name: String,
    values: Vec<f64>,
    missing: Vec<bool>,
    recoded: BTreeMap<usize, f64>,
}

impl PartialEq for Series {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.missing == other.missing
            && self.recoded == other.recoded
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a == b || (a.is_nan() && b.is_nan()))
    }
}

impl Series {
    /// Builds a series; NaN entries become missing.
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        let missing = values.iter().map(|v| v.is_nan()).collect();
        Self {
            name: name.into(),
            values,
            missing,
            recoded: BTreeMap::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Values with NaN at every missing cell.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn missing_mask(&self) -> &[bool] {
        &self.missing
    }

    pub fn is_missing(&self, t: usize) -> bool {
        self.missing[t]
    }

    pub fn get(&self, t: usize) -> Option<f64> {
        (!self.missing[t]).then(|| self.values[t])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    /// Original values of cells re-coded as missing, keyed by row.
    pub fn recoded(&self) -> &BTreeMap<usize, f64> {
        &self.recoded
    }

    /// Value the cell carried before any re-coding (NaN if it was empty).
    pub fn original(&self, t: usize) -> f64 {
        self.recoded.get(&t).copied().unwrap_or(self.values[t])
    }

    /// Marks extra cells as missing, keeping their values for audit.
    pub fn with_masked(&self, rows: impl IntoIterator<Item = usize>) -> Series {
        let mut out = self.clone();
        for t in rows {
            if !out.missing[t] {
                out.recoded.insert(t, out.values[t]);
                out.missing[t] = true;
                out.values[t] = f64::NAN;
            }
        }
        out
    }
}

/// Multivariate series on a regular time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    index: TimeIndex,
    index_name: String,
    columns: Vec<Series>,
    seasonalities: Seasonalities,
    n: usize,
}

impl SeriesFrame {
    pub fn new(index: TimeIndex, columns: Vec<Series>, seasonalities: Seasonalities) -> Result<Self> {
        let n = columns.first().map_or(0, Series::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("all series must have the same length"));
        }
        seasonalities.check_length(n)?;
        Ok(Self {
            index,
            index_name: "timestamp".to_string(),
            columns,
            seasonalities,
            n,
        })
    }

    /// Frame on the integer grid `0..n` from named value vectors.
    pub fn from_columns<S: Into<String>>(
        columns: Vec<(S, Vec<f64>)>,
        seasonalities: &[usize],
    ) -> Result<Self> {
        let cols = columns
            .into_iter()
            .map(|(name, values)| Series::new(name, values))
            .collect();
        Self::new(
            TimeIndex::default(),
            cols,
            Seasonalities::new(seasonalities.to_vec())?,
        )
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn index(&self) -> &TimeIndex {
        &self.index
    }

    pub fn index_name(&self) -> &str {
        &self.index_name
    }

    pub fn columns(&self) -> &[Series] {
        &self.columns
    }

    pub fn column(&self, j: usize) -> &Series {
        &self.columns[j]
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(Series::name).collect()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn seasonalities(&self) -> &Seasonalities {
        &self.seasonalities
    }

    pub fn with_seasonalities(&self, periods: Vec<usize>) -> Result<Self> {
        let s = Seasonalities::new(periods)?;
        s.check_length(self.n)?;
        Ok(Self {
            seasonalities: s,
            ..self.clone()
        })
    }

    /// Copy with column `j` replaced.
    pub fn with_column(&self, j: usize, series: Series) -> Result<Self> {
        if series.len() != self.n {
            return Err(Error::invalid("replacement series has the wrong length"));
        }
        let mut out = self.clone();
        out.columns[j] = series;
        Ok(out)
    }

    /// Copy restricted to the given columns, in the given order.
    pub fn select(&self, cols: &[usize]) -> Self {
        Self {
            columns: cols.iter().map(|&j| self.columns[j].clone()).collect(),
            ..self.clone()
        }
    }

    pub fn timestamp_label(&self, t: usize) -> String {
        self.index.label(t)
    }
}

/// Ingestion options for [`load_csv`].
#[derive(Debug, Clone, Default)]
pub struct IngestConfig {
    pub seasonalities: Vec<usize>,
}

fn is_missing_token(s: &str) -> bool {
    let s = s.trim();
    s.is_empty()
        || s.eq_ignore_ascii_case("na")
        || s.eq_ignore_ascii_case("nan")
        || s.eq_ignore_ascii_case("null")
}

enum Stamp {
    Int(i64),
    Date(NaiveDateTime, DateFormat),
}

fn parse_stamp(raw: &str) -> Option<Stamp> {
    let s = raw.trim();
    if let Ok(i) = s.parse::<i64>() {
        return Some(Stamp::Int(i));
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        let format = DateFormat {
            separator: if s.contains('T') { 'T' } else { ' ' },
            seconds: true,
            zulu: true,
            date_only: false,
        };
        return Some(Stamp::Date(dt.naive_utc(), format));
    }
    let (body, zulu) = match s.strip_suffix('Z') {
        Some(b) => (b, true),
        None => (s, false),
    };
    const PATTERNS: [(&str, char, bool); 4] = [
        ("%Y-%m-%dT%H:%M:%S", 'T', true),
        ("%Y-%m-%d %H:%M:%S", ' ', true),
        ("%Y-%m-%dT%H:%M", 'T', false),
        ("%Y-%m-%d %H:%M", ' ', false),
    ];
    for (pattern, separator, seconds) in PATTERNS {
        if let Ok(dt) = NaiveDateTime::parse_from_str(body, pattern) {
            let format = DateFormat {
                separator,
                seconds,
                zulu,
                date_only: false,
            };
            return Some(Stamp::Date(dt, format));
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(body, "%Y-%m-%d") {
        let format = DateFormat {
            date_only: true,
            ..DateFormat::default()
        };
        return Some(Stamp::Date(d.and_hms_opt(0, 0, 0)?, format));
    }
    None
}

fn describe_step(ticks: i64, dates: bool) -> String {
    if dates {
        format!("{ticks}s")
    } else {
        ticks.to_string()
    }
}

/// Reads a CSV file into a frame. See [`read_csv`].
pub fn load_csv(path: impl AsRef<Path>, config: &IngestConfig) -> Result<SeriesFrame> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, config)
}

/// Parses CSV content: first column timestamps (ISO-8601 or integer), the
/// rest numeric. Empty cells and NaN/NA tokens become missing. Skipped grid
/// steps are inserted as all-missing rows.
pub fn read_csv<R: Read>(reader: R, config: &IngestConfig) -> Result<SeriesFrame> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::invalid("csv has no header"));
    }
    let index_name = headers[0].to_string();
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();

    let mut ticks: Vec<i64> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut kind: Option<Option<DateFormat>> = None;
    let mut first_date: Option<NaiveDateTime> = None;

    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let raw = record.get(0).unwrap_or("");
        let stamp = parse_stamp(raw).ok_or_else(|| Error::BadTimestamp {
            row: line,
            value: raw.to_string(),
        })?;
        let tick = match (stamp, kind) {
            (Stamp::Int(v), None | Some(None)) => {
                kind = Some(None);
                v
            }
            (Stamp::Date(dt, fmt), None) => {
                kind = Some(Some(fmt));
                first_date = Some(dt);
                0
            }
            (Stamp::Date(dt, _), Some(Some(_))) => (dt - first_date.unwrap_or(dt)).num_seconds(),
            _ => {
                return Err(Error::BadTimestamp {
                    row: line,
                    value: raw.to_string(),
                })
            }
        };
        if let Some(&prev) = ticks.last() {
            if tick == prev {
                return Err(Error::DuplicateTimestamp { row: line });
            }
            if tick < prev {
                return Err(Error::NonMonotoneTimestamps { row: line });
            }
        }
        let mut values = Vec::with_capacity(names.len());
        for (j, name) in names.iter().enumerate() {
            let cell = record.get(j + 1).unwrap_or("");
            if is_missing_token(cell) {
                values.push(f64::NAN);
                continue;
            }
            let v: f64 = cell.trim().parse().map_err(|_| Error::BadValue {
                row: line,
                column: name.clone(),
                value: cell.to_string(),
            })?;
            if v.is_infinite() {
                return Err(Error::BadValue {
                    row: line,
                    column: name.clone(),
                    value: cell.to_string(),
                });
            }
            values.push(v);
        }
        ticks.push(tick);
        rows.push(values);
    }

    let dates = matches!(kind, Some(Some(_)));
    let step = ticks.windows(2).map(|w| w[1] - w[0]).min().unwrap_or(1);
    if let Some(bad) = ticks.windows(2).map(|w| w[1] - w[0]).find(|d| d % step != 0) {
        return Err(Error::MixedPeriods {
            base: describe_step(step, dates),
            other: describe_step(bad, dates),
        });
    }
    let n = match (ticks.first(), ticks.last()) {
        (Some(a), Some(b)) => ((b - a) / step) as usize + 1,
        _ => 0,
    };
    let mut columns: Vec<Vec<f64>> = vec![vec![f64::NAN; n]; names.len()];
    let origin = ticks.first().copied().unwrap_or(0);
    for (tick, row) in ticks.iter().zip(&rows) {
        let t = ((tick - origin) / step) as usize;
        for (j, v) in row.iter().enumerate() {
            columns[j][t] = *v;
        }
    }
    let index = match kind {
        Some(Some(format)) => TimeIndex::DateTime {
            start: first_date.expect("date grid has a first stamp"),
            step_seconds: step,
            format,
        },
        _ => TimeIndex::Integer {
            start: origin,
            step,
        },
    };
    let series = names
        .into_iter()
        .zip(columns)
        .map(|(name, values)| Series::new(name, values))
        .collect();
    let mut frame = SeriesFrame::new(index, series, Seasonalities::new(config.seasonalities.clone())?)?;
    frame.index_name = index_name;
    Ok(frame)
}

/// Formats a value for CSV output; missing cells become empty fields.
/// `Display` for `f64` prints the shortest representation that parses back
/// to the same bits.
pub fn format_value(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

/// Writes the frame, optionally followed by extra named columns.
pub fn write_csv<W: Write>(frame: &SeriesFrame, extra: &[(String, Vec<f64>)], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec![frame.index_name.clone()];
    header.extend(frame.columns.iter().map(|c| c.name.clone()));
    header.extend(extra.iter().map(|(name, _)| name.clone()));
    wtr.write_record(&header)?;
    for t in 0..frame.n {
        let mut rec = Vec::with_capacity(header.len());
        rec.push(frame.index.label(t));
        for c in &frame.columns {
            rec.push(format_value(c.values[t]));
        }
        for (_, vals) in extra {
            rec.push(format_value(vals[t]));
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

/// Rules for re-coding sentinel values (for example zeros) as missing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MissingSpec {
    pub sentinels: Vec<f64>,
    /// Only re-code when a whole aligned period consists of sentinels.
    pub whole_period_only: bool,
    /// Observations per period; defaults to the primary seasonality.
    pub period: Option<usize>,
}

/// Re-codes sentinel cells as missing.
///
/// Periods are aligned to the first row: `[0, P)`, `[P, 2P)`, ... and a
/// trailing partial period is judged on its own cells. In whole-period mode a
/// cell that is already missing counts as matching, so a day of zeros with a
/// transmission gap is still re-coded. Already-missing cells are never
/// un-marked, which makes the operation idempotent.
pub fn apply_missing_spec(frame: &SeriesFrame, spec: &MissingSpec) -> Result<SeriesFrame> {
    if spec.sentinels.is_empty() {
        return Ok(frame.clone());
    }
    let n = frame.len();
    let period = if spec.whole_period_only {
        let p = match spec.period {
            Some(p) => p,
            None => frame.seasonalities.primary().ok_or_else(|| {
                Error::invalid("whole-period re-coding needs a period or a seasonality")
            })?,
        };
        if p == 0 {
            return Err(Error::invalid("period must be positive"));
        }
        if p > n {
            return Err(Error::invalid(format!(
                "period {p} exceeds the series length {n}"
            )));
        }
        p
    } else {
        1
    };
    let is_sentinel = |v: f64| spec.sentinels.iter().any(|s| *s == v);

    let mut out = frame.clone();
    for col in &mut out.columns {
        let matches: Vec<bool> = (0..n)
            .map(|t| col.missing[t] || is_sentinel(col.values[t]))
            .collect();
        let mut rows = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + period).min(n);
            if matches[start..end].iter().all(|&m| m) {
                rows.extend((start..end).filter(|&t| !col.missing[t]));
            }
            start = end;
        }
        *col = col.with_masked(rows);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCoverage {
    pub period: usize,
    /// Share of phases with at least one observed value.
    pub covered: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub name: String,
    pub observed: usize,
    pub missing: usize,
    pub gaps: usize,
    pub longest_gap: usize,
    pub coverage: Vec<PhaseCoverage>,
}

/// Missing-data overview per series.
pub fn summary(frame: &SeriesFrame) -> Vec<SeriesSummary> {
    frame
        .columns
        .iter()
        .map(|c| {
            let mut gaps = 0;
            let mut longest = 0;
            let mut run = 0;
            for &m in &c.missing {
                if m {
                    if run == 0 {
                        gaps += 1;
                    }
                    run += 1;
                    longest = longest.max(run);
                } else {
                    run = 0;
                }
            }
            let coverage = frame
                .seasonalities
                .periods()
                .iter()
                .map(|&p| {
                    let mut seen = vec![false; p];
                    for t in (0..frame.n).filter(|&t| !c.missing[t]) {
                        seen[t % p] = true;
                    }
                    PhaseCoverage {
                        period: p,
                        covered: seen.iter().filter(|&&s| s).count() as f64 / p as f64,
                    }
                })
                .collect();
            let missing = c.missing_count();
            SeriesSummary {
                name: c.name.clone(),
                observed: frame.n - missing,
                missing,
                gaps,
                longest_gap: longest,
                coverage,
            }
        })
        .collect()
}
