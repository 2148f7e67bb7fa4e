//! Report files on disk.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::backtest::ForecastReport;
use super::metrics::MetricTriple;
use super::svg::{bar_chart, line_chart};

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv: {e}"))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// `date,hour,actual_mw,forecast_mw`, one row per forecast hour.
pub fn hourly_csv(report: &ForecastReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["date", "hour", "actual_mw", "forecast_mw"])
        .map_err(csv_err)?;
    for d in &report.days {
        for (h, (a, f)) in d.actual.iter().zip(&d.forecast).enumerate() {
            w.write_record([d.date.to_string(), h.to_string(), a.to_string(), f.to_string()])
                .map_err(csv_err)?;
        }
    }
    finish(w)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// One summary line per labelled result.
pub fn summary_csv(rows: &[(String, MetricTriple)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "mae_mw", "mape_pct", "rmse_mw", "mape_excluded_hours"])
        .map_err(csv_err)?;
    for (label, m) in rows {
        w.write_record([
            label.clone(),
            m.mae.to_string(),
            fmt_opt(m.mape),
            m.rmse.to_string(),
            m.mape_excluded.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

pub fn corrections_csv(report: &ForecastReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "date",
        "mode",
        "windows",
        "epochs_run",
        "recent_loss_before",
        "recent_loss_after",
    ])
    .map_err(csv_err)?;
    for c in &report.corrections {
        w.write_record([
            c.date.to_string(),
            c.mode.as_str().to_string(),
            c.windows.to_string(),
            c.epochs_run.to_string(),
            c.recent_loss_before.to_string(),
            c.recent_loss_after.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

pub fn overlay_svg(report: &ForecastReport) -> String {
    let a = report.hourly_actuals();
    let f = report.hourly_forecasts();
    line_chart(
        &format!(
            "{}: actual vs forecast from {}",
            report.config.label, report.config.first_day
        ),
        "load (MW)",
        &[("actual", &a), ("forecast", &f)],
    )
}

pub fn daily_mape_svg(report: &ForecastReport) -> String {
    let bars: Vec<(String, f64)> = report
        .days
        .iter()
        .map(|d| (d.date.to_string(), d.metrics.mape_or_nan()))
        .collect();
    bar_chart(&format!("{}: daily MAPE", report.config.label), "MAPE (%)", &bars)
}

pub(crate) fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `report.json`, `forecast.csv`, `summary.csv`, `corrections.csv`,
/// `forecast.svg` and `daily_mape.svg` into `dir` (created if needed).
pub fn write_report_files(report: &ForecastReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files: Vec<(&str, Vec<u8>)> = vec![
        ("report.json", report.to_json()?),
        ("forecast.csv", hourly_csv(report)?.into_bytes()),
        (
            "summary.csv",
            summary_csv(&[(report.config.label.clone(), report.aggregate)])?.into_bytes(),
        ),
        ("corrections.csv", corrections_csv(report)?.into_bytes()),
        ("forecast.svg", overlay_svg(report).into_bytes()),
        ("daily_mape.svg", daily_mape_svg(report).into_bytes()),
    ];
    let mut written = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let p = dir.join(name);
        write_file(&p, &bytes)?;
        written.push(p);
    }
    Ok(written)
}
