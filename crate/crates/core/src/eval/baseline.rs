//! Reference forecasts used to judge the model.

use std::ops::Range;

use crate::data::LoadSeries;
use crate::error::{Error, Result};

use super::metrics::{metrics, MetricTriple};

/// Seasonal-naive forecast: each hour repeats the load 168 hours earlier.
pub fn seasonal_naive(series: &LoadSeries, days: Range<usize>) -> Result<Vec<f64>> {
    if days.start * 24 < 168 || days.end > series.num_days() {
        return Err(Error::Data(format!(
            "seasonal-naive needs a week of history before day {} and days up to {} (series has {})",
            days.start,
            days.end,
            series.num_days()
        )));
    }
    Ok(series.values()[days.start * 24 - 168..days.end * 24 - 168].to_vec())
}

/// Error of a forecaster that knows the noiseless signal exactly. Nothing
/// trained on noisy data can do better in expectation.
pub fn ideal_forecast_metrics(series: &LoadSeries, signal: &[f64], days: Range<usize>) -> Result<MetricTriple> {
    if signal.len() != series.len() {
        return Err(Error::InvalidArgument("signal and series lengths differ".into()));
    }
    let hours = days.start * 24..days.end * 24;
    metrics(&series.values()[hours.clone()], &signal[hours])
}

pub fn seasonal_naive_metrics(series: &LoadSeries, days: Range<usize>) -> Result<MetricTriple> {
    let f = seasonal_naive(series, days.clone())?;
    metrics(&series.values()[days.start * 24..days.end * 24], &f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate_with_signal, SynthConfig};
    use chrono::NaiveDate;

    fn weekly_series() -> LoadSeries {
        let start = NaiveDate::from_ymd_opt(2021, 1, 4)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let values = (0..24 * 21).map(|h| 100.0 + (h % 168) as f64).collect();
        LoadSeries::new(start, values, Default::default()).unwrap()
    }

    #[test]
    fn naive_is_exact_on_a_weekly_periodic_series() {
        let s = weekly_series();
        let m = seasonal_naive_metrics(&s, 7..21).unwrap();
        assert_eq!(m.mae, 0.0);
        assert_eq!(seasonal_naive(&s, 7..8).unwrap()[5], s.values()[5]);
    }

    #[test]
    fn naive_needs_a_week() {
        assert!(seasonal_naive(&weekly_series(), 6..8).is_err());
    }

    #[test]
    fn ideal_floor_tracks_noise_level() {
        let cfg = SynthConfig {
            years: 1,
            noise_std_fraction: 0.02,
            ..SynthConfig::default()
        };
        let (s, signal) = synth_generate_with_signal(&cfg).unwrap();
        let m = ideal_forecast_metrics(&s, &signal, 7..s.num_days()).unwrap();
        // |N(0, σ)| has mean σ·√(2/π); relative to a ~1000 MW load
        let expected = 0.02 * 1000.0 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((m.mae - expected).abs() < 0.05 * expected, "{} vs {expected}", m.mae);
        let noiseless = SynthConfig {
            noise_std_fraction: 0.0,
            ..cfg
        };
        let (s0, sig0) = synth_generate_with_signal(&noiseless).unwrap();
        assert_eq!(ideal_forecast_metrics(&s0, &sig0, 7..30).unwrap().mae, 0.0);
    }
}
