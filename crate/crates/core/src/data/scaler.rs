use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::LoadSeries;
use crate::error::{Error, Result};

/// Min-max normalization fitted on the training range only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min_value: f64,
    pub max_value: f64,
}

impl Scaler {
    pub fn new(min_value: f64, max_value: f64) -> Result<Self> {
        if !(min_value.is_finite() && max_value.is_finite() && max_value > min_value) {
            return Err(Error::Data(format!(
                "scaler needs finite max > min, got [{min_value}, {max_value}]"
            )));
        }
        Ok(Scaler { min_value, max_value })
    }

    pub fn fit_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Data("cannot fit scaler on an empty range".into()));
        }
        let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        if hi <= lo {
            return Err(Error::Data(format!("constant training range ({lo}); cannot scale")));
        }
        Scaler::new(lo, hi)
    }

    pub fn span(&self) -> f64 {
        self.max_value - self.min_value
    }

    /// Values outside the fitted range map outside `[0, 1]`.
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.min_value) / self.span()
    }

    pub fn invert(&self, y: f64) -> f64 {
        y * self.span() + self.min_value
    }
}

pub fn fit_scaler(series: &LoadSeries, training_range: Range<usize>) -> Result<Scaler> {
    if training_range.is_empty() || training_range.end > series.len() {
        return Err(Error::Data(format!(
            "training range {training_range:?} invalid for series of length {}",
            series.len()
        )));
    }
    Scaler::fit_values(&series.values()[training_range])
}
