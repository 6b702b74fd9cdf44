//! Automatic cleaning: median imputation, outlier detection, then one joint
//! re-model of missing and flagged cells for every requested quantile level.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{format_value, SeriesFrame};
use crate::missing::{model_missing_values, validate_taus, ImputeOptions, Replacements};
use crate::outlier::{detect_outliers_values, DetectOptions, OutlierReport};

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningOptions {
    pub taus: Vec<f64>,
    pub impute: ImputeOptions,
    pub detect: DetectOptions,
    /// Primary period for detection; defaults to the frame's shortest.
    pub s1: Option<usize>,
    /// Columns with a larger flagged share are passed through unchanged.
    pub max_outlier_share: f64,
}

impl Default for CleaningOptions {
    fn default() -> Self {
        Self {
            taus: vec![0.5],
            impute: ImputeOptions::default(),
            detect: DetectOptions::default(),
            s1: None,
            max_outlier_share: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellClass {
    /// Missing in the input and replaced by a single model fit.
    MissingOriginal,
    /// Flagged as an outlier and replaced.
    OutlierDetected,
    /// Missing in the input and modelled again together with the outliers.
    MissingAndRemodelled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRecord {
    pub column: usize,
    pub row: usize,
    pub class: CellClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum ColumnStatus {
    Cleaned,
    Aborted { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDiagnostics {
    pub column: String,
    #[serde(flatten)]
    pub status: ColumnStatus,
    pub missing: usize,
    pub flagged: usize,
    pub notes: Vec<String>,
}

/// One imputed matrix per quantile level, plus what was done to which cell.
#[derive(Debug, Clone)]
pub struct CleaningResult {
    pub index_name: String,
    pub timestamps: Vec<String>,
    pub columns: Vec<String>,
    pub taus: Vec<f64>,
    /// `imputed[k][j][t]`: level `taus[k]`, column `j`, row `t`. NaN where a
    /// cell is still missing.
    pub imputed: Vec<Vec<Vec<f64>>>,
    pub outlier_reports: Vec<OutlierReport>,
    pub cell_provenance: Vec<CellRecord>,
    pub diagnostics: Vec<ColumnDiagnostics>,
    pub options_echo: serde_json::Value,
}

fn same_values(a: &[Vec<Vec<f64>>], b: &[Vec<Vec<f64>>]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.len() == y.len()
                && x.iter().zip(y).all(|(u, v)| {
                    u.len() == v.len()
                        && u.iter().zip(v).all(|(p, q)| p == q || (p.is_nan() && q.is_nan()))
                })
        })
}

impl PartialEq for CleaningResult {
    fn eq(&self, other: &Self) -> bool {
        self.index_name == other.index_name
            && self.timestamps == other.timestamps
            && self.columns == other.columns
            && self.taus == other.taus
            && same_values(&self.imputed, &other.imputed)
            && self.outlier_reports == other.outlier_reports
            && self.cell_provenance == other.cell_provenance
            && self.diagnostics == other.diagnostics
            && self.options_echo == other.options_echo
    }
}

impl CleaningResult {
    /// Matrix for level `tau`, column-major.
    pub fn at(&self, tau: f64) -> Result<&[Vec<f64>]> {
        self.taus
            .iter()
            .position(|&t| (t - tau).abs() < 1e-12)
            .map(|k| self.imputed[k].as_slice())
            .ok_or_else(|| Error::UnmodelledQuantile {
                tau,
                available: self.taus.clone(),
            })
    }

    pub fn aborted(&self) -> Vec<&ColumnDiagnostics> {
        self.diagnostics
            .iter()
            .filter(|d| matches!(d.status, ColumnStatus::Aborted { .. }))
            .collect()
    }

    fn skeleton(frame: &SeriesFrame, taus: Vec<f64>, options_echo: serde_json::Value) -> Self {
        let n = frame.len();
        let base: Vec<Vec<f64>> = frame.columns().iter().map(|c| c.values().to_vec()).collect();
        Self {
            index_name: frame.index_name().to_string(),
            timestamps: (0..n).map(|t| frame.timestamp_label(t)).collect(),
            columns: frame.names().iter().map(|s| s.to_string()).collect(),
            imputed: vec![base; taus.len()],
            taus,
            outlier_reports: frame
                .columns()
                .iter()
                .map(|c| OutlierReport::empty(c.name(), n, 0.5))
                .collect(),
            cell_provenance: Vec::new(),
            diagnostics: Vec::new(),
            options_echo,
        }
    }

    fn apply(&mut self, col: usize, rep: &Replacements, class_of: impl Fn(usize) -> CellClass) -> Result<()> {
        for k in 0..self.taus.len() {
            let values = rep.at(self.taus[k])?;
            for (&t, &v) in rep.indices.iter().zip(values) {
                self.imputed[k][col][t] = v;
            }
        }
        self.cell_provenance.extend(rep.indices.iter().map(|&t| CellRecord {
            column: col,
            row: t,
            class: class_of(t),
        }));
        Ok(())
    }
}

/// Applies modelled replacements `(column, replacements)` to a frame, one
/// output matrix per level in `taus`.
pub fn impute_modelled_data(
    frame: &SeriesFrame,
    replacements: &[(usize, Replacements)],
    taus: &[f64],
) -> Result<CleaningResult> {
    let taus = validate_taus(taus)?;
    let echo = serde_json::json!({ "taus": taus });
    let mut result = CleaningResult::skeleton(frame, taus, echo);
    for (col, rep) in replacements {
        if *col >= frame.width() {
            return Err(Error::UnknownColumn(format!("#{col}")));
        }
        result.apply(*col, rep, |_| CellClass::MissingOriginal)?;
    }
    result.cell_provenance.sort_by_key(|r| (r.column, r.row));
    Ok(result)
}

/// Cleans every column of `frame` in input order.
///
/// Missing cells are first filled with a median forecast; outliers are then
/// detected on the completed series, and finally the originally missing and
/// the flagged cells are modelled together from the remaining observed cells.
/// Earlier columns enter later ones as externals in their median-filled form.
/// Failures and excessive flag shares abort only the affected column.
pub fn auto_data_cleaning(frame: &SeriesFrame, options: &CleaningOptions) -> Result<CleaningResult> {
    let taus = validate_taus(&options.taus)?;
    if taus.is_empty() {
        return Err(Error::invalid("at least one quantile level is required"));
    }
    options.detect.validate()?;
    if !(options.max_outlier_share > 0.0 && options.max_outlier_share <= 1.0) {
        return Err(Error::invalid("max_outlier_share must lie in (0, 1]"));
    }
    let periods = frame.seasonalities().periods().to_vec();
    let s1 = options.s1.or_else(|| frame.seasonalities().primary());
    let mut result = CleaningResult::skeleton(frame, taus.clone(), serde_json::to_value(options)?);
    let mut filled: Vec<Vec<f64>> = frame.columns().iter().map(|c| c.values().to_vec()).collect();

    for j in 0..frame.width() {
        let series = frame.column(j);
        let y = series.values();
        let externals: Vec<Vec<f64>> = (0..frame.width()).filter(|&i| i != j).map(|i| filled[i].clone()).collect();
        let mut diag = ColumnDiagnostics {
            column: series.name().to_string(),
            status: ColumnStatus::Cleaned,
            missing: series.missing_count(),
            flagged: 0,
            notes: Vec::new(),
        };
        result.outlier_reports[j].threshold = options.detect.threshold;
        let outcome = clean_column(series.name(), y, &periods, s1, &externals, &taus, options, &mut diag);
        match outcome {
            Ok(cleaned) => {
                filled[j] = cleaned.median_filled;
                if let Some(report) = cleaned.report {
                    diag.flagged = report.flagged.len();
                    result.outlier_reports[j] = report;
                }
                match cleaned.stage3 {
                    Stage3::Unchanged => {}
                    Stage3::Replaced(rep) => {
                        let flagged = &result.outlier_reports[j].flagged;
                        let any_flag = !flagged.is_empty();
                        let flagged = flagged.clone();
                        result.apply(j, &rep, |t| {
                            if flagged.binary_search(&t).is_ok() {
                                CellClass::OutlierDetected
                            } else if any_flag {
                                CellClass::MissingAndRemodelled
                            } else {
                                CellClass::MissingOriginal
                            }
                        })?;
                    }
                    Stage3::Aborted(reason) => diag.status = ColumnStatus::Aborted { reason },
                }
            }
            Err(e) => {
                diag.status = ColumnStatus::Aborted { reason: e.to_string() };
            }
        }
        result.diagnostics.push(diag);
    }
    result.cell_provenance.sort_by_key(|r| (r.column, r.row));
    Ok(result)
}

enum Stage3 {
    Unchanged,
    Replaced(Replacements),
    Aborted(String),
}

struct ColumnOutcome {
    median_filled: Vec<f64>,
    report: Option<OutlierReport>,
    stage3: Stage3,
}

#[allow(clippy::too_many_arguments)]
fn clean_column(
    name: &str,
    y: &[f64],
    periods: &[usize],
    s1: Option<usize>,
    externals: &[Vec<f64>],
    taus: &[f64],
    options: &CleaningOptions,
    diag: &mut ColumnDiagnostics,
) -> Result<ColumnOutcome> {
    let n = y.len();
    let missing: Vec<usize> = (0..n).filter(|&t| !y[t].is_finite()).collect();
    let mut median_filled = y.to_vec();
    if !missing.is_empty() {
        let (model, rep) = model_missing_values(name, y, periods, externals, &[0.5], &options.impute)?;
        diag.notes.extend(model.notes);
        for (&t, &v) in rep.indices.iter().zip(rep.at(0.5)?) {
            median_filled[t] = v;
        }
    }

    let report = match s1 {
        Some(s1) => Some(detect_outliers_values(name, &median_filled, periods, s1, &options.detect)?.report),
        None => {
            diag.notes.push("no seasonality given; outlier detection skipped".into());
            None
        }
    };
    let flagged: &[usize] = report.as_ref().map_or(&[], |r| r.flagged.as_slice());
    if flagged.len() as f64 > options.max_outlier_share * n as f64 {
        let reason = format!(
            "{} of {} cells flagged, above the limit of {}",
            flagged.len(),
            n,
            options.max_outlier_share
        );
        return Ok(ColumnOutcome {
            median_filled,
            report,
            stage3: Stage3::Aborted(reason),
        });
    }
    if missing.is_empty() && flagged.is_empty() {
        return Ok(ColumnOutcome {
            median_filled,
            report,
            stage3: Stage3::Unchanged,
        });
    }
    let mut masked = y.to_vec();
    for &t in flagged {
        masked[t] = f64::NAN;
    }
    let (model, rep) = model_missing_values(name, &masked, periods, externals, taus, &options.impute)?;
    diag.notes.extend(model.notes);
    Ok(ColumnOutcome {
        median_filled,
        report,
        stage3: Stage3::Replaced(rep),
    })
}

#[derive(Serialize, Deserialize)]
struct ReportFile {
    index_name: String,
    columns: Vec<String>,
    taus: Vec<f64>,
    imputed_files: Vec<String>,
    diagnostics: Vec<ColumnDiagnostics>,
    cell_provenance: Vec<CellRecord>,
    outlier_reports: Vec<OutlierReport>,
    options_echo: serde_json::Value,
}

/// File name of the imputed matrix for level `tau`.
pub fn imputed_file_name(tau: f64) -> String {
    format!("imputed_q{}.csv", format_value(tau))
}

/// Writes one CSV per level and a JSON report into `dir`; returns the paths
/// written, report last.
pub fn write_report(result: &CleaningResult, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (k, &tau) in result.taus.iter().enumerate() {
        let path = dir.join(imputed_file_name(tau));
        let mut wtr = csv::Writer::from_path(&path)?;
        let mut header = vec![result.index_name.clone()];
        header.extend(result.columns.iter().cloned());
        wtr.write_record(&header)?;
        for (t, stamp) in result.timestamps.iter().enumerate() {
            let mut rec = vec![stamp.clone()];
            rec.extend(result.imputed[k].iter().map(|c| format_value(c[t])));
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    let report = ReportFile {
        index_name: result.index_name.clone(),
        columns: result.columns.clone(),
        taus: result.taus.clone(),
        imputed_files: result.taus.iter().map(|&t| imputed_file_name(t)).collect(),
        diagnostics: result.diagnostics.clone(),
        cell_provenance: result.cell_provenance.clone(),
        outlier_reports: result.outlier_reports.clone(),
        options_echo: result.options_echo.clone(),
    };
    let path = dir.join(REPORT_FILE);
    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

/// Reads a directory written by [`write_report`].
pub fn read_report(dir: impl AsRef<Path>) -> Result<CleaningResult> {
    let dir = dir.as_ref();
    let path = dir.join(REPORT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let report: ReportFile = serde_json::from_str(&text)?;
    let m = report.columns.len();
    let mut timestamps: Option<Vec<String>> = None;
    let mut imputed = Vec::with_capacity(report.taus.len());
    for file in &report.imputed_files {
        let path = dir.join(file);
        let mut rdr = csv::Reader::from_path(&path)?;
        if rdr.headers()?.len() != m + 1 {
            return Err(Error::invalid(format!("{}: expected {} columns", path.display(), m + 1)));
        }
        let mut stamps = Vec::new();
        let mut matrix = vec![Vec::new(); m];
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            stamps.push(rec[0].to_string());
            for j in 0..m {
                let field = &rec[j + 1];
                let v = if field.is_empty() {
                    f64::NAN
                } else {
                    field.parse().map_err(|_| Error::BadValue {
                        row: row + 2,
                        column: report.columns[j].clone(),
                        value: field.to_string(),
                    })?
                };
                matrix[j].push(v);
            }
        }
        match &timestamps {
            Some(prev) if *prev != stamps => {
                return Err(Error::invalid(format!("{}: timestamps differ between files", path.display())));
            }
            Some(_) => {}
            None => timestamps = Some(stamps),
        }
        imputed.push(matrix);
    }
    Ok(CleaningResult {
        index_name: report.index_name,
        timestamps: timestamps.unwrap_or_default(),
        columns: report.columns,
        taus: report.taus,
        imputed,
        outlier_reports: report.outlier_reports,
        cell_provenance: report.cell_provenance,
        diagnostics: report.diagnostics,
        options_echo: report.options_echo,
    })
}
