use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use tsclean::bench::run_study;
use tsclean::decompose::decompose_values;
use tsclean::frame::format_value;
use tsclean::missing::model_missing_values;
use tsclean::outlier::detect_outliers;
use tsclean::pipeline::{auto_data_cleaning, impute_modelled_data, write_report, CleaningOptions};
use tsclean::{apply_missing_spec, load_csv, write_csv, IngestConfig, MissingSpec, SeriesFrame};

use crate::args::{BenchArgs, CleanArgs, Cli, Command, DecomposeArgs, DetectArgs, ImputeArgs};
use crate::config::{
    decompose_options, detect_options, impute_options, input_settings, study_config, FileConfig, InputSettings,
};
use crate::{CliError, EXIT_OK, EXIT_PARTIAL};

const DEFAULT_OUT: &str = "tsclean-out";

pub fn run(cli: Cli) -> Result<u8, CliError> {
    let cfg = FileConfig::load(cli.global.config.as_deref())?;
    if let Some(n) = cli.global.threads.or(cfg.threads) {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    let out = cli
        .global
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    fs::create_dir_all(&out).map_err(|e| CliError::Data(format!("creating {}: {e}", out.display())))?;
    match &cli.command {
        Command::Decompose(a) => decompose(a, &cfg, &out),
        Command::Impute(a) => impute(a, &cfg, &out),
        Command::Detect(a) => detect(a, &cfg, &out),
        Command::Clean(a) => clean(a, &cfg, &out),
        Command::Bench(a) => bench(a, &cfg, &out),
    }
}

fn load_frame(s: &InputSettings) -> Result<SeriesFrame, CliError> {
    let frame = load_csv(
        &s.path,
        &IngestConfig {
            seasonalities: s.seasonalities.clone(),
        },
    )?;
    let frame = if s.sentinels.is_empty() {
        frame
    } else {
        let spec = MissingSpec {
            sentinels: s.sentinels.clone(),
            whole_period_only: s.whole_period,
            period: s.sentinel_period,
        };
        apply_missing_spec(&frame, &spec)?
    };
    match &s.columns {
        Some(names) => {
            let idx = names
                .iter()
                .map(|n| frame.column_index(n))
                .collect::<tsclean::Result<Vec<_>>>()?;
            Ok(frame.select(&idx))
        }
        None => Ok(frame),
    }
}

fn input_echo(s: &InputSettings) -> serde_json::Value {
    json!({
        "seasonalities": s.seasonalities,
        "columns": s.columns,
        "sentinels": s.sentinels,
        "whole_period": s.whole_period,
        "sentinel_period": s.sentinel_period,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("writing {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<fs::File, CliError> {
    fs::File::create(path).map_err(|e| CliError::Data(format!("writing {}: {e}", path.display())))
}

/// Keeps file names portable.
fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Values of the named columns; in `skip` mode the current column is left out.
fn external_values(frame: &SeriesFrame, names: &[String], skip: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let mut out = Vec::new();
    for n in names {
        let j = frame.column_index(n)?;
        if j != skip {
            out.push(frame.column(j).values().to_vec());
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct ColumnError {
    column: String,
    error: String,
}

fn decompose(a: &DecomposeArgs, cfg: &FileConfig, out: &Path) -> Result<u8, CliError> {
    let input = input_settings(&a.input, cfg);
    let frame = load_frame(&input)?;
    let options = decompose_options(&a.decompose, cfg);
    let ext_names = a.externals.clone().or_else(|| cfg.externals.clone()).unwrap_or_default();
    let periods = frame.seasonalities().periods().to_vec();
    let mut summaries = Vec::new();
    let mut errors = Vec::new();
    for j in 0..frame.width() {
        let series = frame.column(j);
        log::info!("decomposing {}", series.name());
        let externals = external_values(&frame, &ext_names, j)?;
        let dec = match decompose_values(series.values(), &periods, &externals, &options) {
            Ok(d) => d,
            Err(e) => {
                errors.push(ColumnError {
                    column: series.name().into(),
                    error: e.to_string(),
                });
                continue;
            }
        };
        let path = out.join(format!("decompose_{}.csv", file_stem(series.name())));
        let mut wtr = csv::Writer::from_writer(create(&path)?);
        let mut header = vec![frame.index_name().to_string(), "observed".into(), "trend".into()];
        header.extend(periods.iter().map(|p| format!("seasonal_{p}")));
        header.extend(["external".to_string(), "remainder".to_string()]);
        wtr.write_record(&header).map_err(|e| CliError::Data(e.to_string()))?;
        for t in 0..frame.len() {
            let mut rec = vec![frame.timestamp_label(t), format_value(series.values()[t]), format_value(dec.trend[t])];
            rec.extend(dec.seasonal.iter().map(|s| format_value(s[t])));
            rec.push(format_value(dec.external[t]));
            rec.push(format_value(dec.remainder[t]));
            wtr.write_record(&rec).map_err(|e| CliError::Data(e.to_string()))?;
        }
        wtr.flush().map_err(|e| CliError::Data(e.to_string()))?;
        summaries.push(json!({
            "column": series.name(),
            "file": path.file_name().map(|f| f.to_string_lossy().into_owned()),
            "components": dec.component_names(),
            "external_coefficients": dec.external_coefficients,
        }));
    }
    write_json(
        &out.join("decompose.json"),
        &json!({
            "input": input_echo(&input),
            "externals": ext_names,
            "options": options,
            "columns": summaries,
            "errors": errors,
        }),
    )?;
    Ok(if errors.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}

fn impute(a: &ImputeArgs, cfg: &FileConfig, out: &Path) -> Result<u8, CliError> {
    let input = input_settings(&a.input, cfg);
    let frame = load_frame(&input)?;
    let decompose = decompose_options(&a.decompose, cfg);
    let options = impute_options(&a.impute, decompose, cfg)?;
    let taus = a.taus.clone().or_else(|| cfg.taus.clone()).unwrap_or_else(|| vec![0.5]);
    let taus = tsclean::missing::validate_taus(&taus)?;
    let ext_names = a.externals.clone().or_else(|| cfg.externals.clone()).unwrap_or_default();
    let periods = frame.seasonalities().periods().to_vec();
    let mut replacements = Vec::new();
    let mut models = Vec::new();
    let mut errors = Vec::new();
    for j in 0..frame.width() {
        let series = frame.column(j);
        if series.missing_count() == 0 {
            continue;
        }
        log::info!("modelling {} ({} missing)", series.name(), series.missing_count());
        let externals = external_values(&frame, &ext_names, j)?;
        match model_missing_values(series.name(), series.values(), &periods, &externals, &taus, &options) {
            Ok((model, rep)) => {
                models.push(json!({
                    "column": model.column,
                    "lags": model.lag_set.lags(),
                    "regressors": model.regressor_names,
                    "externals": model.externals,
                    "training_rows": model.training_rows,
                    "recursive": model.recursive,
                    "notes": model.notes,
                    "mean_coefficients": model.mean_fit.coefficients,
                    "cells": rep.provenance,
                }));
                replacements.push((j, rep));
            }
            Err(e) => errors.push(ColumnError {
                column: series.name().into(),
                error: e.to_string(),
            }),
        }
    }
    let result = impute_modelled_data(&frame, &replacements, &taus)?;
    let mut extra = Vec::new();
    for j in 0..frame.width() {
        for (k, tau) in taus.iter().enumerate() {
            extra.push((
                format!("{}_imputed_q{}", frame.column(j).name(), format_value(*tau)),
                result.imputed[k][j].clone(),
            ));
        }
    }
    write_csv(&frame, &extra, create(&out.join("imputed.csv"))?)?;
    write_json(
        &out.join("impute.json"),
        &json!({
            "input": input_echo(&input),
            "taus": taus,
            "externals": ext_names,
            "options": options,
            "models": models,
            "cell_provenance": result.cell_provenance,
            "errors": errors,
        }),
    )?;
    Ok(if errors.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}

fn detect(a: &DetectArgs, cfg: &FileConfig, out: &Path) -> Result<u8, CliError> {
    let input = input_settings(&a.input, cfg);
    let frame = load_frame(&input)?;
    let options = detect_options(&a.detect, cfg)?;
    let s1 = a.detect.s1.or(cfg.s1);
    let mut reports = Vec::new();
    let mut errors = Vec::new();
    for j in 0..frame.width() {
        let name = frame.column(j).name();
        log::info!("detecting outliers in {name}");
        match detect_outliers(&frame, j, s1, &options) {
            Ok(d) => reports.push(d.report),
            Err(e) => errors.push(ColumnError {
                column: name.into(),
                error: e.to_string(),
            }),
        }
    }
    let mut wtr = csv::Writer::from_writer(create(&out.join("outlier_probabilities.csv"))?);
    let mut header = vec![frame.index_name().to_string()];
    for r in &reports {
        header.push(format!("{}_probability", r.column));
        header.push(format!("{}_flagged", r.column));
    }
    wtr.write_record(&header).map_err(|e| CliError::Data(e.to_string()))?;
    for t in 0..frame.len() {
        let mut rec = vec![frame.timestamp_label(t)];
        for r in &reports {
            rec.push(format_value(r.probabilities[t]));
            rec.push(u8::from(r.flagged.binary_search(&t).is_ok()).to_string());
        }
        wtr.write_record(&rec).map_err(|e| CliError::Data(e.to_string()))?;
    }
    wtr.flush().map_err(|e| CliError::Data(e.to_string()))?;
    write_json(
        &out.join("outliers.json"),
        &json!({
            "input": input_echo(&input),
            "s1": s1,
            "options": options,
            "reports": reports,
            "errors": errors,
        }),
    )?;
    Ok(if errors.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}

fn clean(a: &CleanArgs, cfg: &FileConfig, out: &Path) -> Result<u8, CliError> {
    let input = input_settings(&a.input, cfg);
    let frame = load_frame(&input)?;
    let decompose = decompose_options(&a.decompose, cfg);
    let options = CleaningOptions {
        taus: a.taus.clone().or_else(|| cfg.taus.clone()).unwrap_or_else(|| vec![0.5]),
        impute: impute_options(&a.impute, decompose, cfg)?,
        detect: detect_options(&a.detect, cfg)?,
        s1: a.detect.s1.or(cfg.s1),
        max_outlier_share: a
            .max_outlier_share
            .or(cfg.max_outlier_share)
            .unwrap_or(CleaningOptions::default().max_outlier_share),
    };
    let mut result = auto_data_cleaning(&frame, &options)?;
    result.options_echo = json!({
        "input": input_echo(&input),
        "cleaning": result.options_echo,
    });
    write_report(&result, out)?;
    let aborted = result.aborted();
    for d in &aborted {
        let line = serde_json::to_string(d).map_err(|e| CliError::Data(e.to_string()))?;
        eprintln!("{line}");
    }
    Ok(if aborted.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}

fn bench(a: &BenchArgs, cfg: &FileConfig, out: &Path) -> Result<u8, CliError> {
    let input = input_settings(&a.input, cfg);
    let frame = load_frame(&input)?;
    let config = study_config(a, cfg)?;
    if frame.width() == 0 {
        return Err(CliError::Data("input has no series".into()));
    }
    let series = frame.column(0);
    if series.missing_count() > 0 {
        return Err(CliError::Data(format!(
            "series {:?} has {} missing values; the study needs a complete series",
            series.name(),
            series.missing_count()
        )));
    }
    log::info!("running the masking study on {}", series.name());
    let table = run_study(series.values(), frame.seasonalities().periods(), &config)?;
    table.write_mae_csv(create(&out.join("bench_mae.csv"))?)?;
    table.write_seconds_csv(create(&out.join("bench_seconds.csv"))?)?;
    write_json(
        &out.join("bench.json"),
        &json!({
            "input": input_echo(&input),
            "column": series.name(),
            "config": config,
        }),
    )?;
    let failures: usize = table.rows.iter().map(|r| r.failures).sum();
    Ok(if failures == 0 { EXIT_OK } else { EXIT_PARTIAL })
}
