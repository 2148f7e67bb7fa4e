//! C ABI over the loadcast library.
//!
//! Every function returns a status code (`LOADCAST_OK` on success) and never
//! unwinds across the boundary. After a failure,
//! `loadcast_last_error_message` returns a description of the most recent
//! error on the calling thread.
//!
//! Dates cross the boundary as `yyyymmdd` integers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use chrono::NaiveDate;
use loadcast::data::{HolidayCalendar, HORIZON, WINDOW_WIDTH};
use loadcast::eval::{forecast_day, metrics};
use loadcast::train::{load_checkpoint, Checkpoint};
use loadcast::Error;

pub const LOADCAST_OK: i32 = 0;
/// A required pointer argument was null.
pub const LOADCAST_ERR_NULL_POINTER: i32 = 1;
/// An argument had the wrong length, range or encoding.
pub const LOADCAST_ERR_INVALID_ARGUMENT: i32 = 2;
pub const LOADCAST_ERR_IO: i32 = 3;
/// Input loads were negative, non-finite or otherwise unusable.
pub const LOADCAST_ERR_DATA: i32 = 4;
/// The checkpoint file is malformed, corrupted or of an unknown version.
pub const LOADCAST_ERR_CHECKPOINT: i32 = 5;
/// The model produced a non-finite value.
pub const LOADCAST_ERR_NUMERIC: i32 = 6;
/// An internal panic was caught at the boundary.
pub const LOADCAST_ERR_INTERNAL: i32 = 7;

/// Hours of load history a forecast consumes.
pub const LOADCAST_HISTORY_HOURS: usize = 168;
/// Hours produced by one forecast.
pub const LOADCAST_HORIZON_HOURS: usize = 24;

// literals above so the C header carries numbers, not Rust names
const _: () = assert!(LOADCAST_HISTORY_HOURS == WINDOW_WIDTH && LOADCAST_HORIZON_HOURS == HORIZON);

/// Opaque handle to a loaded checkpoint.
pub struct LoadcastModel {
    checkpoint: Checkpoint,
}

/// Forecast accuracy. `mape` is NaN when every actual value is zero.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct LoadcastMetrics {
    pub mae: f64,
    pub mape: f64,
    pub rmse: f64,
    /// Hours left out of the MAPE because the actual load was zero.
    pub mape_excluded: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } => LOADCAST_ERR_IO,
            Error::Data(_) | Error::Lookahead { .. } => LOADCAST_ERR_DATA,
            Error::Checkpoint(_) => LOADCAST_ERR_CHECKPOINT,
            Error::NonFinite { .. } | Error::Divergence { .. } => LOADCAST_ERR_NUMERIC,
            Error::Shape { .. } | Error::InvalidArgument(_) | Error::Config(_) => LOADCAST_ERR_INVALID_ARGUMENT,
        };
        Failure::new(code, e.to_string())
    }
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Runs `f`, records any failure and converts it to a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            LOADCAST_OK
        }
        Ok(Err(failure)) => {
            set_last_error(failure.message);
            failure.code
        }
        Err(_) => {
            set_last_error("internal panic".to_string());
            LOADCAST_ERR_INTERNAL
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(LOADCAST_ERR_NULL_POINTER, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// Borrows `len` values from `p`. A null pointer is accepted only when `len` is 0.
unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

fn decode_date(v: i32, name: &str) -> Result<NaiveDate, Failure> {
    let date = if v > 0 {
        NaiveDate::from_ymd_opt(v / 10000, (v / 100 % 100) as u32, (v % 100) as u32)
    } else {
        None
    };
    date.ok_or_else(|| {
        Failure::new(
            LOADCAST_ERR_INVALID_ARGUMENT,
            format!("{name}: {v} is not a yyyymmdd date"),
        )
    })
}

/// Library version as a static nul-terminated string. Do not free it.
#[no_mangle]
pub extern "C" fn loadcast_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads and verifies a checkpoint. On success `*out` receives a handle that
/// must be released with `loadcast_model_free`.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn loadcast_model_load(path: *const c_char, out: *mut *mut LoadcastModel) -> i32 {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure::new(LOADCAST_ERR_INVALID_ARGUMENT, "path is not valid UTF-8"))?;
        let checkpoint = load_checkpoint(Path::new(path))?;
        *out = Box::into_raw(Box::new(LoadcastModel { checkpoint }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from `loadcast_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn loadcast_model_free(model: *mut LoadcastModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Forecasts the 24 hourly loads (MW) of `target_date` from the
/// `LOADCAST_HISTORY_HOURS` loads that immediately precede its midnight.
/// `holidays` lists holiday dates and may be null when `n_holidays` is 0.
///
/// # Safety
/// Every pointer must be valid for the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn loadcast_forecast_day(
    model: *const LoadcastModel,
    history_mw: *const f64,
    history_len: usize,
    target_date: i32,
    holidays: *const i32,
    n_holidays: usize,
    out_mw: *mut f64,
    out_len: usize,
) -> i32 {
    guard(|| {
        non_null(model, "model")?;
        non_null(out_mw, "out_mw")?;
        if out_len != HORIZON {
            return Err(Failure::new(
                LOADCAST_ERR_INVALID_ARGUMENT,
                format!("out_len is {out_len}, expected {HORIZON}"),
            ));
        }
        let history = slice(history_mw, history_len, "history_mw")?;
        let target = decode_date(target_date, "target_date")?;
        let calendar = slice(holidays, n_holidays, "holidays")?
            .iter()
            .map(|&d| decode_date(d, "holidays"))
            .collect::<Result<HolidayCalendar, _>>()?;
        let forecast = forecast_day(&(*model).checkpoint, history, target, &calendar)?;
        std::slice::from_raw_parts_mut(out_mw, out_len).copy_from_slice(&forecast);
        Ok(())
    })
}

/// Computes MAE, MAPE (%) and RMSE of `forecast` against `actual`.
///
/// # Safety
/// `actual` and `forecast` must hold `n` values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn loadcast_metrics(
    actual: *const f64,
    forecast: *const f64,
    n: usize,
    out: *mut LoadcastMetrics,
) -> i32 {
    guard(|| {
        non_null(out, "out")?;
        let m = metrics(slice(actual, n, "actual")?, slice(forecast, n, "forecast")?)?;
        *out = LoadcastMetrics {
            mae: m.mae,
            mape: m.mape_or_nan(),
            rmse: m.rmse,
            mape_excluded: m.mape_excluded,
        };
        Ok(())
    })
}

/// Copy of the last error message on this thread, or null if the last call
/// succeeded. Release it with `loadcast_string_free`.
#[no_mangle]
pub extern "C" fn loadcast_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| match &*slot.borrow() {
        Some(msg) => msg.clone().into_raw(),
        None => ptr::null_mut(),
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn loadcast_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
