use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::Deserialize;

use crate::error::{Error, Result};

pub type HolidayCalendar = BTreeSet<NaiveDate>;

/// Longest run of missing hours that ingestion repairs by interpolation.
pub const MAX_REPAIRABLE_GAP: i64 = 3;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M";

/// Contiguous hourly load observations starting at midnight, whole days only.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadSeries {
    start: NaiveDateTime,
    values: Vec<f64>,
    holidays: HolidayCalendar,
}

impl LoadSeries {
    pub fn new(start: NaiveDateTime, values: Vec<f64>, holidays: HolidayCalendar) -> Result<Self> {
        if start.time().num_seconds_from_midnight() != 0 {
            return Err(Error::Data(format!("series must start at 00:00, got {start}")));
        }
        if values.is_empty() || !values.len().is_multiple_of(24) {
            return Err(Error::Data(format!(
                "series length {} is not a positive multiple of 24",
                values.len()
            )));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(Error::Data(format!(
                "invalid load {v} at {}",
                start + Duration::hours(i as i64)
            )));
        }
        Ok(LoadSeries {
            start,
            values,
            holidays,
        })
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_days(&self) -> usize {
        self.values.len() / 24
    }

    pub fn holidays(&self) -> &HolidayCalendar {
        &self.holidays
    }

    pub fn timestamp(&self, index: usize) -> NaiveDateTime {
        self.start + Duration::hours(index as i64)
    }

    pub fn day_date(&self, day: usize) -> NaiveDate {
        self.start.date() + Duration::days(day as i64)
    }

    /// Day offset of `date` from the first day, if it lies inside the series.
    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        let d = (date - self.start.date()).num_days();
        (d >= 0 && (d as usize) < self.num_days()).then_some(d as usize)
    }

    pub fn is_holiday(&self, date: NaiveDate) -> bool {
        self.holidays.contains(&date)
    }

    /// Writes the series as `timestamp,load_mw` CSV. Values use the shortest
    /// representation that parses back to the same `f64`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.values.len() * 24);
        out.push_str("timestamp,load_mw\n");
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{},{}\n", self.timestamp(i).format(TIMESTAMP_FORMAT), v));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn write_holidays(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for d in &self.holidays {
            writeln!(f, "{}", d.format("%Y-%m-%d")).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// What ingestion repaired or dropped.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub interpolated_hours: usize,
    pub trimmed_leading_hours: usize,
    pub trimmed_trailing_hours: usize,
}

#[derive(Debug, Deserialize)]
struct Row {
    timestamp: String,
    load_mw: f64,
}

pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    let s = s.trim();
    let ts = NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S"))
        .map_err(|e| Error::Data(format!("bad timestamp {s:?}: {e}")))?;
    if ts.minute() != 0 || ts.second() != 0 {
        return Err(Error::Data(format!("timestamp {s} is not on the hour")));
    }
    Ok(ts)
}

/// Reads a load CSV plus holiday file. See [`load_csv_with_report`].
pub fn load_csv(path: &Path, holiday_path: &Path) -> Result<LoadSeries> {
    load_csv_with_report(path, holiday_path).map(|(s, _)| s)
}

pub fn load_csv_with_report(path: &Path, holiday_path: &Path) -> Result<(LoadSeries, IngestReport)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let holidays = load_holidays(holiday_path)?;
    parse_load_csv(&text, holidays)
}

pub fn load_holidays(path: &Path) -> Result<HolidayCalendar> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_holidays(&text)
}

pub fn parse_holidays(text: &str) -> Result<HolidayCalendar> {
    let mut out = HolidayCalendar::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let d = NaiveDate::parse_from_str(line, "%Y-%m-%d")
            .map_err(|e| Error::Data(format!("holiday file line {}: {line:?}: {e}", n + 1)))?;
        out.insert(d);
    }
    Ok(out)
}

/// Validates and repairs hourly rows.
///
/// Runs of at most [`MAX_REPAIRABLE_GAP`] missing hours are linearly
/// interpolated; longer runs are an error naming the first missing hour.
/// A first day that starts after 00:00 is dropped when it misses at most
/// that many leading hours and rejected otherwise. A trailing partial day
/// is dropped.
pub fn parse_load_csv(text: &str, holidays: HolidayCalendar) -> Result<(LoadSeries, IngestReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("csv header: {e}")))?
        .clone();
    if headers.len() != 2 || &headers[0] != "timestamp" || &headers[1] != "load_mw" {
        return Err(Error::Data(format!(
            "expected header `timestamp,load_mw`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut rows: Vec<(NaiveDateTime, f64)> = Vec::new();
    for (n, rec) in reader.deserialize::<Row>().enumerate() {
        let row = rec.map_err(|e| Error::Data(format!("csv row {}: {e}", n + 2)))?;
        let ts = parse_timestamp(&row.timestamp)?;
        if !row.load_mw.is_finite() || row.load_mw < 0.0 {
            return Err(Error::Data(format!(
                "invalid load {} at {}",
                row.load_mw, row.timestamp
            )));
        }
        if let Some(&(prev, _)) = rows.last() {
            if ts == prev {
                return Err(Error::Data(format!("duplicate timestamp {}", row.timestamp)));
            }
            if ts < prev {
                return Err(Error::Data(format!(
                    "timestamp {} is earlier than the preceding {}",
                    row.timestamp,
                    prev.format(TIMESTAMP_FORMAT)
                )));
            }
        }
        rows.push((ts, row.load_mw));
    }
    let Some(&(first, _)) = rows.first() else {
        return Err(Error::Data("no rows".into()));
    };

    let mut report = IngestReport::default();
    let mut values = Vec::with_capacity(rows.len());
    let mut start = first;
    let lead = i64::from(first.hour());
    if lead > MAX_REPAIRABLE_GAP {
        return Err(Error::Data(format!(
            "{lead}-hour gap: data for {} starts at {}; first missing hour {}",
            first.date(),
            first.format(TIMESTAMP_FORMAT),
            first.date().and_hms_opt(0, 0, 0).unwrap().format(TIMESTAMP_FORMAT)
        )));
    }

    let mut prev: Option<(NaiveDateTime, f64)> = None;
    for &(ts, v) in &rows {
        if let Some((pt, pv)) = prev {
            let missing = (ts - pt).num_hours() - 1;
            if missing > MAX_REPAIRABLE_GAP {
                return Err(Error::Data(format!(
                    "{missing}-hour gap starting at {}",
                    (pt + Duration::hours(1)).format(TIMESTAMP_FORMAT)
                )));
            }
            for k in 1..=missing {
                let frac = k as f64 / (missing + 1) as f64;
                values.push(pv + (v - pv) * frac);
            }
            report.interpolated_hours += missing as usize;
        }
        values.push(v);
        prev = Some((ts, v));
    }

    if lead > 0 {
        let skip = (24 - lead) as usize;
        let skip = skip.min(values.len());
        values.drain(..skip);
        start = first + Duration::hours(skip as i64);
        report.trimmed_leading_hours = skip;
    }
    let tail = values.len() % 24;
    values.truncate(values.len() - tail);
    report.trimmed_trailing_hours = tail;
    if values.is_empty() {
        return Err(Error::Data("no complete day of data".into()));
    }
    let series = LoadSeries::new(start, values, holidays)?;
    Ok((series, report))
}

pub(crate) fn weekday_code(date: NaiveDate) -> usize {
    date.weekday().num_days_from_monday() as usize
}
