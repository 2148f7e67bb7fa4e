//! Hourly load ingestion, normalization, sliding windows and synthetic data.

mod scaler;
mod series;
mod synth;
mod window;

pub use scaler::{fit_scaler, Scaler};
pub use series::{
    load_csv, load_csv_with_report, load_holidays, parse_holidays, parse_load_csv, parse_timestamp, HolidayCalendar,
    IngestReport, LoadSeries, MAX_REPAIRABLE_GAP,
};
pub use synth::{daily_profile, synth_generate, synth_generate_with_signal, LevelShift, SynthConfig, DAILY_PEAK_HOUR};
pub use window::{make_windows, window_for_day, RawWindow, HORIZON, WINDOW_STRIDE, WINDOW_WIDTH};

pub(crate) use series::weekday_code;
