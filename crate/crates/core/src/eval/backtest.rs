//! Rolling day-ahead evaluation with scheduled corrections.

use std::cell::Cell;
use std::ops::Range;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::data::{HolidayCalendar, LoadSeries, RawWindow, HORIZON, WINDOW_STRIDE, WINDOW_WIDTH};
use crate::error::{Error, Result};
use crate::features::{assemble_sample, WindowSample};
use crate::model::forward;
use crate::train::{correct_online, Checkpoint, CorrectionMode, CorrectionPolicy};

use super::metrics::{metrics, MetricTriple};

/// Read-only view of a series that refuses to return hours at or beyond
/// the revealed horizon.
pub struct RevealedSeries<'a> {
    series: &'a LoadSeries,
    revealed: usize,
    max_read: Cell<Option<usize>>,
}

impl<'a> RevealedSeries<'a> {
    pub fn new(series: &'a LoadSeries, revealed_hours: usize) -> Self {
        RevealedSeries {
            series,
            revealed: revealed_hours.min(series.len()),
            max_read: Cell::new(None),
        }
    }

    pub fn series(&self) -> &'a LoadSeries {
        self.series
    }

    pub fn revealed(&self) -> usize {
        self.revealed
    }

    pub fn reveal(&mut self, hours: usize) {
        self.revealed = self.revealed.max(hours.min(self.series.len()));
    }

    /// Highest hour index handed out so far.
    pub fn max_index_read(&self) -> Option<usize> {
        self.max_read.get()
    }

    pub fn slice(&self, hours: Range<usize>) -> Result<&'a [f64]> {
        if hours.end > self.revealed {
            let day = self.series.timestamp(self.revealed.min(self.series.len() - 1)).date();
            return Err(Error::Lookahead {
                day,
                index: hours.end - 1,
                revealed: self.revealed,
            });
        }
        if hours.end > hours.start {
            let m = self.max_read.get().map_or(hours.end - 1, |m| m.max(hours.end - 1));
            self.max_read.set(Some(m));
        }
        Ok(&self.series.values()[hours])
    }

    /// The week before day `day` and, when `with_target`, the day itself.
    /// Without a target the window's target is zero-filled.
    pub fn window(&self, day: usize, with_target: bool) -> Result<RawWindow> {
        let start = day * 24;
        if start < WINDOW_WIDTH || start + HORIZON > self.series.len() {
            return Err(Error::Data(format!(
                "day {} needs a {WINDOW_WIDTH}-hour history inside the series",
                self.series.day_date(day.min(self.series.num_days().saturating_sub(1)))
            )));
        }
        let history = self.slice(start - WINDOW_WIDTH..start)?.to_vec();
        let target = if with_target {
            self.slice(start..start + HORIZON)?.to_vec()
        } else {
            vec![0.0; HORIZON]
        };
        let history_start = self.series.timestamp(start - WINDOW_WIDTH);
        Ok(RawWindow {
            index: (start - WINDOW_WIDTH) / WINDOW_STRIDE + 1,
            offset: start - WINDOW_WIDTH,
            history,
            target,
            history_start,
            target_start: history_start + Duration::hours(WINDOW_WIDTH as i64),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DayRecord {
    pub date: NaiveDate,
    pub actual: Vec<f64>,
    pub forecast: Vec<f64>,
    pub metrics: MetricTriple,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectionRecord {
    /// Last day whose data the correction used.
    pub date: NaiveDate,
    pub mode: CorrectionMode,
    pub windows: usize,
    pub epochs_run: usize,
    /// Normalized Γ1 over the most recent week before and after.
    pub recent_loss_before: f64,
    pub recent_loss_after: f64,
}

/// Something that produces day-ahead forecasts in MW.
pub trait DayAheadModel {
    fn forecast(&mut self, data: &RevealedSeries, day: usize) -> Result<Vec<f64>>;

    /// Called at the end of every cadence window with day `end_day` fully
    /// revealed. Returns a log entry if the model changed.
    fn correct(
        &mut self,
        data: &RevealedSeries,
        end_day: usize,
        policy: &CorrectionPolicy,
        k: u64,
    ) -> Result<Option<CorrectionRecord>>;
}

/// The trained network; corrections update it in place.
pub struct CheckpointModel {
    pub checkpoint: Checkpoint,
}

impl CheckpointModel {
    fn sample(&self, data: &RevealedSeries, day: usize, with_target: bool) -> Result<WindowSample> {
        let raw = data.window(day, with_target)?;
        let s = &self.checkpoint.setup;
        assemble_sample(
            &raw,
            &s.scaler,
            data.series().holidays(),
            s.clusters.as_ref(),
            s.features,
        )
    }
}

/// Day-ahead forecast in MW for `target` from the 168 hourly loads (MW)
/// that precede it.
pub fn forecast_day(
    checkpoint: &Checkpoint,
    history_mw: &[f64],
    target: NaiveDate,
    calendar: &HolidayCalendar,
) -> Result<Vec<f64>> {
    if history_mw.len() != WINDOW_WIDTH {
        return Err(Error::shape(
            "forecast_day",
            format!("history has {} hours, expected {WINDOW_WIDTH}", history_mw.len()),
        ));
    }
    if let Some(v) = history_mw.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::Data(format!("history contains invalid load {v}")));
    }
    let target_start = target.and_hms_opt(0, 0, 0).expect("midnight exists");
    let raw = RawWindow {
        index: 1,
        offset: 0,
        history: history_mw.to_vec(),
        target: vec![0.0; HORIZON],
        history_start: target_start - Duration::hours(WINDOW_WIDTH as i64),
        target_start,
    };
    let s = &checkpoint.setup;
    let sample = assemble_sample(&raw, &s.scaler, calendar, s.clusters.as_ref(), s.features)?;
    let y = forward(&sample.x, &sample.q, &checkpoint.params)?;
    Ok(y.into_iter().map(|v| s.scaler.invert(v)).collect())
}

impl DayAheadModel for CheckpointModel {
    fn forecast(&mut self, data: &RevealedSeries, day: usize) -> Result<Vec<f64>> {
        let history = data.slice(day * 24 - WINDOW_WIDTH..day * 24)?;
        forecast_day(
            &self.checkpoint,
            history,
            data.series().day_date(day),
            data.series().holidays(),
        )
    }

    fn correct(
        &mut self,
        data: &RevealedSeries,
        end_day: usize,
        policy: &CorrectionPolicy,
        k: u64,
    ) -> Result<Option<CorrectionRecord>> {
        if policy.mode == CorrectionMode::None {
            return Ok(None);
        }
        let first = (end_day + 1).saturating_sub(policy.history_days).max(WINDOW_WIDTH / 24);
        let recent: Vec<WindowSample> = (first..=end_day)
            .map(|d| self.sample(data, d, true))
            .collect::<Result<_>>()?;
        let mut cfg = self.checkpoint.train_config.clone();
        cfg.seed = cfg.seed.wrapping_add(k);
        let out = correct_online(&self.checkpoint, &recent, &cfg, policy)?;
        self.checkpoint = out.checkpoint;
        Ok(Some(CorrectionRecord {
            date: data.series().day_date(end_day),
            mode: policy.mode,
            windows: recent.len(),
            epochs_run: out.epochs_run,
            recent_loss_before: out.recent_loss_before,
            recent_loss_after: out.recent_loss_after,
        }))
    }
}

/// Settings recorded with every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub label: String,
    pub policy: CorrectionPolicy,
    /// Hash of the checkpoint the run started from, when there was one.
    pub checkpoint_sha256: Option<String>,
    pub first_day: NaiveDate,
    pub num_days: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastReport {
    pub config: ReportConfig,
    pub aggregate: MetricTriple,
    pub days: Vec<DayRecord>,
    pub corrections: Vec<CorrectionRecord>,
}

impl ForecastReport {
    pub fn hourly_actuals(&self) -> Vec<f64> {
        self.days.iter().flat_map(|d| d.actual.iter().copied()).collect()
    }

    pub fn hourly_forecasts(&self) -> Vec<f64> {
        self.days.iter().flat_map(|d| d.forecast.iter().copied()).collect()
    }

    /// Recomputes every metric from the stored hourly values.
    pub fn check_consistency(&self) -> Result<()> {
        let close = |a: &MetricTriple, b: &MetricTriple| {
            let near = |x: f64, y: f64| (x - y).abs() <= 1e-9 * (1.0 + x.abs().max(y.abs()));
            near(a.mae, b.mae)
                && near(a.rmse, b.rmse)
                && a.mape_excluded == b.mape_excluded
                && match (a.mape, b.mape) {
                    (Some(x), Some(y)) => near(x, y),
                    (None, None) => true,
                    _ => false,
                }
        };
        for d in &self.days {
            if !close(&metrics(&d.actual, &d.forecast)?, &d.metrics) {
                return Err(Error::Data(format!(
                    "report metrics for {} do not match its hourly values",
                    d.date
                )));
            }
        }
        let agg = metrics(&self.hourly_actuals(), &self.hourly_forecasts())?;
        if !close(&agg, &self.aggregate) {
            return Err(Error::Data("aggregate metrics do not match the hourly values".into()));
        }
        if self.aggregate.rmse + 1e-12 < self.aggregate.mae {
            return Err(Error::Data("report has RMSE below MAE".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self).map_err(|e| Error::Data(e.to_string()))?;
        v.push(b'\n');
        Ok(v)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let r: ForecastReport =
            serde_json::from_slice(bytes).map_err(|e| Error::Data(format!("malformed report: {e}")))?;
        r.check_consistency()?;
        Ok(r)
    }
}

/// Forecasts every day in `days` from actual history, correcting the model
/// at the end of each cadence window.
pub fn run_backtest(
    model: &mut dyn DayAheadModel,
    series: &LoadSeries,
    days: Range<usize>,
    policy: &CorrectionPolicy,
    label: &str,
    checkpoint_sha256: Option<String>,
) -> Result<ForecastReport> {
    policy.validate()?;
    if days.is_empty() || days.end > series.num_days() {
        return Err(Error::InvalidArgument(format!(
            "test days {days:?} are empty or exceed the series ({} days)",
            series.num_days()
        )));
    }
    if days.start * 24 < WINDOW_WIDTH {
        return Err(Error::Data(format!(
            "the first test day {} has less than {WINDOW_WIDTH} hours of history",
            series.day_date(days.start)
        )));
    }
    let mut data = RevealedSeries::new(series, days.start * 24);
    let mut records = Vec::with_capacity(days.len());
    let mut corrections = Vec::new();
    for (k, day) in days.clone().enumerate() {
        let forecast = model.forecast(&data, day)?;
        data.reveal((day + 1) * 24);
        let actual = data.slice(day * 24..(day + 1) * 24)?.to_vec();
        records.push(DayRecord {
            date: series.day_date(day),
            metrics: metrics(&actual, &forecast)?,
            actual,
            forecast,
        });
        if (k + 1) % policy.cadence_days == 0 {
            let n = corrections.len() as u64 + 1;
            if let Some(c) = model.correct(&data, day, policy, n)? {
                corrections.push(c);
            }
        }
    }
    let actual: Vec<f64> = records.iter().flat_map(|d| d.actual.iter().copied()).collect();
    let forecast: Vec<f64> = records.iter().flat_map(|d| d.forecast.iter().copied()).collect();
    Ok(ForecastReport {
        config: ReportConfig {
            label: label.to_string(),
            policy: policy.clone(),
            checkpoint_sha256,
            first_day: series.day_date(days.start),
            num_days: days.len(),
        },
        aggregate: metrics(&actual, &forecast)?,
        days: records,
        corrections,
    })
}

#[derive(Clone, Debug)]
pub struct BacktestOutcome {
    pub report: ForecastReport,
    /// The model after the last correction.
    pub final_checkpoint: Checkpoint,
}

/// [`run_backtest`] for a trained checkpoint. `checkpoint` is not modified.
pub fn backtest(
    checkpoint: &Checkpoint,
    series: &LoadSeries,
    days: Range<usize>,
    policy: &CorrectionPolicy,
    label: &str,
) -> Result<BacktestOutcome> {
    let hash = checkpoint.content_hash()?;
    let mut model = CheckpointModel {
        checkpoint: checkpoint.clone(),
    };
    let report = run_backtest(&mut model, series, days, policy, label, Some(hash))?;
    Ok(BacktestOutcome {
        report,
        final_checkpoint: model.checkpoint,
    })
}

/// Repeats the load of 168 hours earlier.
pub struct SeasonalNaive;

impl DayAheadModel for SeasonalNaive {
    fn forecast(&mut self, data: &RevealedSeries, day: usize) -> Result<Vec<f64>> {
        Ok(data.slice(day * 24 - 168..day * 24 - 144)?.to_vec())
    }

    fn correct(
        &mut self,
        _: &RevealedSeries,
        _: usize,
        _: &CorrectionPolicy,
        _: u64,
    ) -> Result<Option<CorrectionRecord>> {
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};
    use crate::train::{fit_model, FitOptions, TrainConfig};
    use std::sync::OnceLock;

    const TRAIN_DAYS: usize = 60;

    fn series() -> &'static LoadSeries {
        static S: OnceLock<LoadSeries> = OnceLock::new();
        S.get_or_init(|| {
            synth_generate(&SynthConfig {
                years: 1,
                ..SynthConfig::default()
            })
            .unwrap()
        })
    }

    fn checkpoint() -> &'static Checkpoint {
        static C: OnceLock<Checkpoint> = OnceLock::new();
        C.get_or_init(|| {
            let opts = FitOptions {
                n_clusters: 3,
                d: 4,
                n_h: 8,
                train: TrainConfig {
                    max_epochs_offline: 2,
                    max_epochs_online: 2,
                    seed: 3,
                    ..TrainConfig::default()
                },
                ..FitOptions::default()
            };
            fit_model(series(), TRAIN_DAYS, &opts).unwrap().checkpoint
        })
    }

    fn days(n: usize) -> Range<usize> {
        TRAIN_DAYS..TRAIN_DAYS + n
    }

    #[test]
    fn no_policy_means_no_corrections() {
        let out = backtest(checkpoint(), series(), days(7), &CorrectionPolicy::none(), "t").unwrap();
        assert_eq!(out.report.days.len(), 7);
        assert!(out.report.corrections.is_empty());
        assert_eq!(
            out.final_checkpoint.content_hash().unwrap(),
            checkpoint().content_hash().unwrap()
        );
        assert_eq!(
            out.report.config.checkpoint_sha256,
            Some(checkpoint().content_hash().unwrap())
        );
    }

    #[test]
    fn weekly_cadence_fires_after_days_7_and_14() {
        let out = backtest(checkpoint(), series(), days(14), &CorrectionPolicy::default(), "t").unwrap();
        let dates: Vec<NaiveDate> = out.report.corrections.iter().map(|c| c.date).collect();
        assert_eq!(
            dates,
            vec![series().day_date(TRAIN_DAYS + 6), series().day_date(TRAIN_DAYS + 13)]
        );
        // windows target days 7..=end, since day 7 is the first with a full week behind it
        let counts: Vec<usize> = out.report.corrections.iter().map(|c| c.windows).collect();
        assert_eq!(counts, vec![TRAIN_DAYS + 7 - 7, TRAIN_DAYS + 14 - 7]);
    }

    struct Oracle;

    impl DayAheadModel for Oracle {
        fn forecast(&mut self, data: &RevealedSeries, day: usize) -> Result<Vec<f64>> {
            Ok(data.series().values()[day * 24..day * 24 + 24].to_vec())
        }
        fn correct(
            &mut self,
            _: &RevealedSeries,
            _: usize,
            _: &CorrectionPolicy,
            _: u64,
        ) -> Result<Option<CorrectionRecord>> {
            Ok(None)
        }
    }

    #[test]
    fn perfect_forecasts_score_zero() {
        let r = run_backtest(
            &mut Oracle,
            series(),
            days(10),
            &CorrectionPolicy::none(),
            "oracle",
            None,
        )
        .unwrap();
        assert_eq!(
            (r.aggregate.mae, r.aggregate.rmse, r.aggregate.mape),
            (0.0, 0.0, Some(0.0))
        );
    }

    struct Cheater;

    impl DayAheadModel for Cheater {
        fn forecast(&mut self, data: &RevealedSeries, day: usize) -> Result<Vec<f64>> {
            Ok(data.slice(day * 24..day * 24 + 24)?.to_vec())
        }
        fn correct(
            &mut self,
            _: &RevealedSeries,
            _: usize,
            _: &CorrectionPolicy,
            _: u64,
        ) -> Result<Option<CorrectionRecord>> {
            Ok(None)
        }
    }

    #[test]
    fn reading_the_target_day_is_refused() {
        let err = run_backtest(&mut Cheater, series(), days(3), &CorrectionPolicy::none(), "x", None).unwrap_err();
        assert!(matches!(err, Error::Lookahead { .. }), "{err}");
    }

    /// Records the furthest hour each forecast touched.
    struct Audited(CheckpointModel, Vec<(usize, usize)>);

    impl DayAheadModel for Audited {
        fn forecast(&mut self, data: &RevealedSeries, day: usize) -> Result<Vec<f64>> {
            let probe = RevealedSeries::new(data.series(), data.revealed());
            let y = self.0.forecast(&probe, day)?;
            self.1.push((day, probe.max_index_read().unwrap()));
            Ok(y)
        }
        fn correct(
            &mut self,
            data: &RevealedSeries,
            end: usize,
            p: &CorrectionPolicy,
            k: u64,
        ) -> Result<Option<CorrectionRecord>> {
            self.0.correct(data, end, p, k)
        }
    }

    #[test]
    fn forecasts_use_only_earlier_hours() {
        let mut m = Audited(
            CheckpointModel {
                checkpoint: checkpoint().clone(),
            },
            Vec::new(),
        );
        run_backtest(&mut m, series(), days(9), &CorrectionPolicy::default(), "a", None).unwrap();
        assert_eq!(m.1.len(), 9);
        for (day, max) in m.1 {
            assert_eq!(max, day * 24 - 1);
        }
    }

    #[test]
    fn history_shortfall_is_an_error() {
        assert!(backtest(checkpoint(), series(), 3..5, &CorrectionPolicy::none(), "t").is_err());
    }

    #[test]
    fn report_round_trips_and_detects_tampering() {
        let r = backtest(checkpoint(), series(), days(5), &CorrectionPolicy::none(), "t")
            .unwrap()
            .report;
        let bytes = r.to_json().unwrap();
        assert_eq!(ForecastReport::from_json(&bytes).unwrap(), r);
        let mut bad = r.clone();
        bad.aggregate.mae += 1e-3;
        assert!(ForecastReport::from_json(&bad.to_json().unwrap()).is_err());
    }

    #[test]
    fn seasonal_naive_model_matches_direct_baseline() {
        let r = run_backtest(
            &mut SeasonalNaive,
            series(),
            days(20),
            &CorrectionPolicy::none(),
            "naive",
            None,
        )
        .unwrap();
        let direct = crate::eval::seasonal_naive_metrics(series(), days(20)).unwrap();
        assert_eq!(r.aggregate, direct);
    }

    #[test]
    fn backtest_is_deterministic() {
        let a = backtest(checkpoint(), series(), days(7), &CorrectionPolicy::default(), "t").unwrap();
        let b = backtest(checkpoint(), series(), days(7), &CorrectionPolicy::default(), "t").unwrap();
        assert_eq!(a.report.to_json().unwrap(), b.report.to_json().unwrap());
    }
}
