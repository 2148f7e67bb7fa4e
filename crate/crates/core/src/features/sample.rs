use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use super::encoding::{holiday_flag, stat_features, write_one_hot, TimeIndex};
use super::kmeans::{similarity, ClusterModel};
use crate::data::{weekday_code, HolidayCalendar, RawWindow, Scaler};
use crate::error::{Error, Result};
use crate::numcore::{Shape, Tensor};

/// Width of one hourly row with all time-index encodings.
pub const FULL_ROW_WIDTH: usize = 34;
const WEEKDAY_CARD: usize = 7;
const HOLIDAY_CARD: usize = 2;

/// Which feature families a model consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureMask {
    /// One-hot weekday/hour/holiday columns in each history row, and the
    /// target day's weekday/holiday encodings in the non-temporal input.
    pub time_index: bool,
    /// Max/min/mean of the history window.
    pub stats: bool,
    /// Cosine similarity to the cluster centers.
    pub similarity: bool,
}

impl FeatureMask {
    pub const FULL: FeatureMask = FeatureMask {
        time_index: true,
        stats: true,
        similarity: true,
    };

    pub fn row_width(&self) -> usize {
        if self.time_index {
            FULL_ROW_WIDTH
        } else {
            1
        }
    }

    /// Length of the non-temporal input; 0 means the model has no FCNN branch.
    pub fn q_dim(&self, n_clusters: usize) -> usize {
        3 * usize::from(self.stats)
            + (WEEKDAY_CARD + HOLIDAY_CARD) * usize::from(self.time_index)
            + n_clusters * usize::from(self.similarity)
    }
}

impl Default for FeatureMask {
    fn default() -> Self {
        FeatureMask::FULL
    }
}

/// One model input/target pair in normalized space.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    /// `seq_len × row_width`: normalized load followed by one-hot time codes.
    pub x: Tensor,
    /// Non-temporal features `[F ‖ W̃ ‖ H̃ ‖ P]` (subject to the mask).
    pub q: Vec<f64>,
    /// Normalized targets.
    pub y: Vec<f64>,
    pub target_date: NaiveDate,
}

/// Builds the model inputs for one raw window.
pub fn assemble_sample(
    raw: &RawWindow,
    scaler: &Scaler,
    calendar: &HolidayCalendar,
    clusters: Option<&ClusterModel>,
    mask: FeatureMask,
) -> Result<WindowSample> {
    let seq = raw.history.len();
    let width = mask.row_width();
    let norm: Vec<f64> = raw.history.iter().map(|&v| scaler.apply(v)).collect();

    let mut x = Tensor::zeros(Shape::Matrix(seq, width));
    for (j, &l) in norm.iter().enumerate() {
        let row = &mut x.data_mut()[j * width..(j + 1) * width];
        row[0] = l;
        if mask.time_index {
            let ts = raw.history_start + Duration::hours(j as i64);
            let ti = TimeIndex::of(ts, calendar);
            write_one_hot(ti.weekday, &mut row[1..8])?;
            write_one_hot(ti.hour, &mut row[8..32])?;
            write_one_hot(ti.holiday_flag, &mut row[32..34])?;
        }
    }

    let target_date = raw.target_date();
    let mut q = Vec::new();
    if mask.stats {
        q.extend_from_slice(&stat_features(&norm));
    }
    if mask.time_index {
        let mut w = [0.0; WEEKDAY_CARD];
        write_one_hot(weekday_code(target_date), &mut w)?;
        let mut h = [0.0; HOLIDAY_CARD];
        write_one_hot(holiday_flag(target_date, calendar), &mut h)?;
        q.extend_from_slice(&w);
        q.extend_from_slice(&h);
    }
    if mask.similarity {
        let model =
            clusters.ok_or_else(|| Error::InvalidArgument("similarity features need a cluster model".into()))?;
        q.extend(similarity(&norm, model)?);
    }

    Ok(WindowSample {
        x,
        q,
        y: raw.target.iter().map(|&v| scaler.apply(v)).collect(),
        target_date,
    })
}

/// Normalized history windows, the input to cluster fitting.
pub fn normalized_histories(windows: &[RawWindow], scaler: &Scaler) -> Vec<Vec<f64>> {
    windows
        .iter()
        .map(|w| w.history.iter().map(|&v| scaler.apply(v)).collect())
        .collect()
}
