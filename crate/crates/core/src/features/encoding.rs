use chrono::{NaiveDateTime, Timelike};

use crate::data::{weekday_code, HolidayCalendar};
use crate::error::{Error, Result};

/// Categorical time codes of one hour.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimeIndex {
    /// 0 = Monday … 6 = Sunday.
    pub weekday: usize,
    pub hour: usize,
    /// 0 when the day is a holiday, 1 otherwise.
    pub holiday_flag: usize,
}

impl TimeIndex {
    pub fn of(ts: NaiveDateTime, calendar: &HolidayCalendar) -> Self {
        TimeIndex {
            weekday: weekday_code(ts.date()),
            hour: ts.hour() as usize,
            holiday_flag: holiday_flag(ts.date(), calendar),
        }
    }
}

pub fn holiday_flag(date: chrono::NaiveDate, calendar: &HolidayCalendar) -> usize {
    usize::from(!calendar.contains(&date))
}

pub fn one_hot(code: usize, cardinality: usize) -> Result<Vec<f64>> {
    let mut v = vec![0.0; cardinality];
    write_one_hot(code, &mut v)?;
    Ok(v)
}

pub(crate) fn write_one_hot(code: usize, out: &mut [f64]) -> Result<()> {
    if code >= out.len() {
        return Err(Error::InvalidArgument(format!(
            "one-hot code {code} out of range for cardinality {}",
            out.len()
        )));
    }
    out.fill(0.0);
    out[code] = 1.0;
    Ok(())
}

/// `[max, min, mean]` of a history window.
pub fn stat_features(window: &[f64]) -> [f64; 3] {
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    let mut sum = 0.0;
    for &v in window {
        max = max.max(v);
        min = min.min(v);
        sum += v;
    }
    [max, min, sum / window.len() as f64]
}
