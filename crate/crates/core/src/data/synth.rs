//! Seeded synthetic hourly load with daily and weekly cycles, a slow trend,
//! holiday dips, an optional level shift and Gaussian noise.

use std::f64::consts::PI;

use chrono::{Datelike, Duration, Months, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::series::weekday_code;
use super::{HolidayCalendar, LoadSeries};
use crate::error::{Error, Result};

/// Hour of day at which the daily profile peaks.
pub const DAILY_PEAK_HOUR: u32 = 9;

/// Fixed-date holidays (month, day) applied every year.
const HOLIDAYS: [(u32, u32); 6] = [(1, 1), (5, 1), (8, 15), (11, 1), (12, 25), (12, 26)];

/// Relative weekly profile, Monday first.
const WEEKLY_PROFILE: [f64; 7] = [1.0, 1.0, 1.0, 1.0, 0.8, -1.0, -1.6];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelShift {
    pub date: NaiveDate,
    pub mw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub start_date: NaiveDate,
    pub years: u32,
    pub base_load: f64,
    pub daily_amplitude: f64,
    pub weekly_amplitude: f64,
    /// MW per year.
    pub trend_slope: f64,
    pub holiday_dip_fraction: f64,
    pub noise_std_fraction: f64,
    pub level_shift: Option<LevelShift>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            start_date: NaiveDate::from_ymd_opt(2019, 1, 1).unwrap(),
            years: 3,
            base_load: 1000.0,
            daily_amplitude: 150.0,
            weekly_amplitude: 60.0,
            trend_slope: 20.0,
            holiday_dip_fraction: 0.2,
            noise_std_fraction: 0.02,
            level_shift: None,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if self.years == 0 {
            return bad("synth.years must be at least 1");
        }
        if !(self.base_load.is_finite() && self.base_load > 0.0) {
            return bad("synth.base_load must be positive");
        }
        if !(self.daily_amplitude >= 0.0 && self.daily_amplitude.is_finite()) {
            return bad("synth.daily_amplitude must be nonnegative");
        }
        if !(self.weekly_amplitude >= 0.0 && self.weekly_amplitude.is_finite()) {
            return bad("synth.weekly_amplitude must be nonnegative");
        }
        if !self.trend_slope.is_finite() {
            return bad("synth.trend_slope must be finite");
        }
        if !(0.0..1.0).contains(&self.holiday_dip_fraction) {
            return bad("synth.holiday_dip_fraction must lie in [0, 1)");
        }
        if !(0.0..0.2).contains(&self.noise_std_fraction) {
            return bad("synth.noise_std_fraction must lie in [0, 0.2)");
        }
        if let Some(shift) = &self.level_shift {
            if !shift.mw.is_finite() {
                return bad("synth.level_shift mw must be finite");
            }
        }
        Ok(())
    }

    pub fn end_date(&self) -> NaiveDate {
        self.start_date + Months::new(12 * self.years)
    }

    pub fn num_days(&self) -> usize {
        (self.end_date() - self.start_date).num_days() as usize
    }

    pub fn holidays(&self) -> HolidayCalendar {
        let mut out = HolidayCalendar::new();
        for year in self.start_date.year()..=self.end_date().year() {
            for (m, d) in HOLIDAYS {
                if let Some(date) = NaiveDate::from_ymd_opt(year, m, d) {
                    if date >= self.start_date && date < self.end_date() {
                        out.insert(date);
                    }
                }
            }
        }
        out
    }
}

/// Daily shape in `[-1, 1]`, peaking at [`DAILY_PEAK_HOUR`].
pub fn daily_profile(hour: u32) -> f64 {
    (2.0 * PI * (hour as f64 - DAILY_PEAK_HOUR as f64 + 6.0) / 24.0).sin()
}

/// Noise-free value at hour `t` (hours since the start date).
fn signal(cfg: &SynthConfig, holidays: &HolidayCalendar, t: usize) -> f64 {
    let ts = cfg.start_date.and_hms_opt(0, 0, 0).unwrap() + Duration::hours(t as i64);
    let date = ts.date();
    let hour = (t % 24) as u32;
    let mut v = cfg.base_load
        + cfg.daily_amplitude * daily_profile(hour)
        + cfg.weekly_amplitude * WEEKLY_PROFILE[weekday_code(date)]
        + cfg.trend_slope * t as f64 / 8760.0;
    if let Some(shift) = &cfg.level_shift {
        if date >= shift.date {
            v += shift.mw;
        }
    }
    if holidays.contains(&date) {
        v *= 1.0 - cfg.holiday_dip_fraction;
    }
    v
}

/// Generates the series. Deterministic for a given config.
pub fn synth_generate(cfg: &SynthConfig) -> Result<LoadSeries> {
    Ok(synth_generate_with_signal(cfg)?.0)
}

/// Generates the series together with its noise-free signal (the ideal
/// forecast any model could hope to make).
pub fn synth_generate_with_signal(cfg: &SynthConfig) -> Result<(LoadSeries, Vec<f64>)> {
    cfg.validate()?;
    let holidays = cfg.holidays();
    let hours = cfg.num_days() * 24;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_std_fraction * cfg.base_load)
        .map_err(|e| Error::Config(format!("synth noise: {e}")))?;
    let mut clean = Vec::with_capacity(hours);
    let mut values = Vec::with_capacity(hours);
    for t in 0..hours {
        let s = signal(cfg, &holidays, t);
        clean.push(s);
        values.push((s + noise.sample(&mut rng)).max(0.0));
    }
    let series = LoadSeries::new(cfg.start_date.and_hms_opt(0, 0, 0).unwrap(), values, holidays)?;
    Ok((series, clean))
}
