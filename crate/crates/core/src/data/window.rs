use chrono::{Duration, NaiveDateTime, Timelike};

use super::LoadSeries;
use crate::error::{Error, Result};

pub const WINDOW_WIDTH: usize = 168;
pub const WINDOW_STRIDE: usize = 24;
pub const HORIZON: usize = 24;

/// One week of history `L_i` and the following day `Y_i`, both in MW.
#[derive(Clone, Debug, PartialEq)]
pub struct RawWindow {
    /// 1-based window number.
    pub index: usize,
    /// Source index (0-based) of the first history hour.
    pub offset: usize,
    pub history: Vec<f64>,
    pub target: Vec<f64>,
    pub history_start: NaiveDateTime,
    pub target_start: NaiveDateTime,
}

impl RawWindow {
    pub fn target_date(&self) -> chrono::NaiveDate {
        self.target_start.date()
    }
}

/// Slides a `width`-hour history window followed by a `horizon`-hour target
/// over the series, advancing `stride` hours at a time.
pub fn make_windows(series: &LoadSeries, width: usize, stride: usize, horizon: usize) -> Result<Vec<RawWindow>> {
    if width == 0 || stride == 0 || horizon == 0 {
        return Err(Error::InvalidArgument(
            "window width, stride and horizon must be positive".into(),
        ));
    }
    if !width.is_multiple_of(24) || !stride.is_multiple_of(24) {
        return Err(Error::InvalidArgument(format!(
            "width {width} and stride {stride} must be whole days to keep targets midnight-aligned"
        )));
    }
    let n = series.len();
    let needed = width + horizon;
    if n < needed {
        return Err(Error::Data(format!(
            "series has {n} hours; at least {needed} are required for one window"
        )));
    }
    let count = (n - needed) / stride + 1;
    Ok((0..count)
        .map(|k| window_at(series, k * stride, width, horizon, k + 1))
        .collect())
}

/// The window whose target is day `day` of the series (0-based), using the
/// default width and horizon.
pub fn window_for_day(series: &LoadSeries, day: usize) -> Result<RawWindow> {
    let target_start = day * 24;
    if target_start < WINDOW_WIDTH || target_start + HORIZON > series.len() {
        return Err(Error::Data(format!(
            "day {day} needs hours {}..{} but the series has {}",
            target_start as i64 - WINDOW_WIDTH as i64,
            target_start + HORIZON,
            series.len()
        )));
    }
    let offset = target_start - WINDOW_WIDTH;
    Ok(window_at(
        series,
        offset,
        WINDOW_WIDTH,
        HORIZON,
        offset / WINDOW_STRIDE + 1,
    ))
}

fn window_at(series: &LoadSeries, offset: usize, width: usize, horizon: usize, index: usize) -> RawWindow {
    let v = series.values();
    let history_start = series.timestamp(offset);
    let target_start = history_start + Duration::hours(width as i64);
    debug_assert_eq!(target_start.hour(), 0);
    RawWindow {
        index,
        offset,
        history: v[offset..offset + width].to_vec(),
        target: v[offset + width..offset + width + horizon].to_vec(),
        history_start,
        target_start,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(n: usize) -> LoadSeries {
        LoadSeries::new(
            chrono::NaiveDate::from_ymd_opt(2021, 1, 4)
                .unwrap()
                .and_hms_opt(0, 0, 0)
                .unwrap(),
            (1..=n).map(|v| v as f64).collect(),
            Default::default(),
        )
        .unwrap()
    }

    #[test]
    fn minimum_length_gives_one_window() {
        let w = make_windows(&series(192), 168, 24, 24).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].history, (1..=168).map(|v| v as f64).collect::<Vec<_>>());
        assert_eq!(w[0].target, (169..=192).map(|v| v as f64).collect::<Vec<_>>());
        assert_eq!(w[0].index, 1);
    }

    #[test]
    fn second_window_starts_one_stride_later() {
        let w = make_windows(&series(216), 168, 24, 24).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[1].history[0], 25.0);
        assert_eq!(
            w[1].target_start.date(),
            chrono::NaiveDate::from_ymd_opt(2021, 1, 12).unwrap()
        );
    }

    #[test]
    fn one_hour_short_is_an_error() {
        // 191 is not a whole number of days, so build the short case by hand
        let s = series(168);
        let err = make_windows(&s, 168, 24, 24).unwrap_err().to_string();
        assert!(err.contains("192"), "{err}");
    }

    #[test]
    fn window_for_day_matches_sliding_windows() {
        let s = series(24 * 12);
        let all = make_windows(&s, 168, 24, 24).unwrap();
        for (k, w) in all.iter().enumerate() {
            assert_eq!(&window_for_day(&s, 7 + k).unwrap(), w);
        }
        assert!(window_for_day(&s, 6).is_err());
        assert!(window_for_day(&s, 12).is_err());
    }

    proptest! {
        #[test]
        fn targets_tile_the_timeline(days in 8usize..40) {
            let s = series(days * 24);
            let w = make_windows(&s, 168, 24, 24).unwrap();
            prop_assert_eq!(w.len(), (days * 24 - 192) / 24 + 1);
            let tiled: Vec<f64> = w.iter().flat_map(|w| w.target.iter().copied()).collect();
            prop_assert_eq!(&tiled[..], &s.values()[168..]);
            for pair in w.windows(2) {
                prop_assert_eq!(&pair[0].history[24..], &pair[1].history[..144]);
            }
        }
    }
}
