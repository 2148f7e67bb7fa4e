//! Metrics, backtesting, baselines, ablations and sweeps.

mod ablation;
mod backtest;
mod baseline;
mod metrics;
mod report;
pub mod svg;

pub use ablation::{
    run_ablation, run_experiment, run_sweep, AblationRow, AblationTable, ExperimentResult, SweepAxis, SweepPoint,
    SweepResult, SweepRun, Variant,
};
pub use backtest::{
    backtest, forecast_day, run_backtest, BacktestOutcome, CheckpointModel, CorrectionRecord, DayAheadModel, DayRecord,
    ForecastReport, ReportConfig, RevealedSeries, SeasonalNaive,
};
pub use baseline::{ideal_forecast_metrics, seasonal_naive, seasonal_naive_metrics};
pub use metrics::{metrics, MetricTriple, MAPE_ZERO_GUARD};
pub use report::{corrections_csv, daily_mape_svg, hourly_csv, overlay_svg, summary_csv, write_report_files};
