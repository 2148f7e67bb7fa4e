use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hours whose actual load is below this (MW) are left out of MAPE.
pub const MAPE_ZERO_GUARD: f64 = 1e-6;

/// Error statistics in MW and percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricTriple {
    pub mae: f64,
    /// `None` when every actual is (near) zero.
    pub mape: Option<f64>,
    pub rmse: f64,
    /// Hours excluded from MAPE by the zero guard.
    pub mape_excluded: usize,
}

impl MetricTriple {
    /// MAPE, or NaN when undefined; convenient for averaging and plotting.
    pub fn mape_or_nan(&self) -> f64 {
        self.mape.unwrap_or(f64::NAN)
    }
}

pub fn metrics(actual: &[f64], forecast: &[f64]) -> Result<MetricTriple> {
    if actual.len() != forecast.len() || actual.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "metrics need equal nonzero lengths, got {} actuals and {} forecasts",
            actual.len(),
            forecast.len()
        )));
    }
    let n = actual.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut pct = 0.0;
    let mut excluded = 0usize;
    for (&a, &f) in actual.iter().zip(forecast) {
        let e = a - f;
        abs += e.abs();
        sq += e * e;
        if a.abs() < MAPE_ZERO_GUARD {
            excluded += 1;
        } else {
            pct += e.abs() / a.abs();
        }
    }
    let kept = actual.len() - excluded;
    let t = MetricTriple {
        mae: abs / n,
        mape: (kept > 0).then(|| pct / kept as f64 * 100.0),
        rmse: (sq / n).sqrt(),
        mape_excluded: excluded,
    };
    if !(t.mae.is_finite() && t.rmse.is_finite()) {
        return Err(Error::NonFinite { op: "metrics" });
    }
    Ok(t)
}
