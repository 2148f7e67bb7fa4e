//! From a load series to a trained checkpoint.

use crate::data::{fit_scaler, make_windows, LoadSeries, RawWindow, HORIZON, WINDOW_STRIDE, WINDOW_WIDTH};
use crate::error::{Error, Result};
use crate::features::{assemble_sample, kmeans_fit, normalized_histories, FeatureMask, KMeansOptions, WindowSample};
use crate::model::ModelDims;

use super::checkpoint::ModelSetup;
use super::config::TrainConfig;
use super::offline::{train_offline, TrainOutcome};

/// Model shape and feature choices for a fit.
#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    pub features: FeatureMask,
    pub n_clusters: usize,
    pub d: usize,
    pub n_h: usize,
    pub train: TrainConfig,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            features: FeatureMask::FULL,
            n_clusters: 20,
            d: 10,
            n_h: 128,
            train: TrainConfig::default(),
        }
    }
}

impl FitOptions {
    pub fn dims(&self) -> ModelDims {
        ModelDims::for_features(self.features, self.n_clusters, self.d, self.n_h)
    }
}

/// Scaler, clusters and training samples derived from the first
/// `train_days` days of a series.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub setup: ModelSetup,
    pub windows: Vec<RawWindow>,
    pub samples: Vec<WindowSample>,
}

/// Fits the scaler and (when enabled) the cluster model on training data
/// only, then assembles one sample per training window. A window belongs to
/// the training set when its target day ends before day `train_days`.
pub fn prepare(series: &LoadSeries, train_days: usize, opts: &FitOptions) -> Result<Prepared> {
    let train_hours = train_days * 24;
    if train_hours > series.len() {
        return Err(Error::Data(format!(
            "training span of {train_days} days exceeds the series ({} days)",
            series.num_days()
        )));
    }
    if train_hours < WINDOW_WIDTH + HORIZON {
        return Err(Error::Data(format!(
            "training span of {train_days} days is shorter than one window ({} hours)",
            WINDOW_WIDTH + HORIZON
        )));
    }
    let scaler = fit_scaler(series, 0..train_hours)?;
    let windows: Vec<RawWindow> = make_windows(series, WINDOW_WIDTH, WINDOW_STRIDE, HORIZON)?
        .into_iter()
        .filter(|w| w.offset + WINDOW_WIDTH + HORIZON <= train_hours)
        .collect();
    let clusters = if opts.features.similarity {
        let histories = normalized_histories(&windows, &scaler);
        Some(kmeans_fit(
            &histories,
            KMeansOptions::new(opts.n_clusters, opts.train.seed),
        )?)
    } else {
        None
    };
    let setup = ModelSetup {
        dims: opts.dims(),
        features: opts.features,
        scaler,
        clusters,
    };
    setup.validate()?;
    let samples = build_samples(&windows, &setup, series)?;
    Ok(Prepared {
        setup,
        windows,
        samples,
    })
}

pub fn build_samples(windows: &[RawWindow], setup: &ModelSetup, series: &LoadSeries) -> Result<Vec<WindowSample>> {
    windows
        .iter()
        .map(|w| {
            assemble_sample(
                w,
                &setup.scaler,
                series.holidays(),
                setup.clusters.as_ref(),
                setup.features,
            )
        })
        .collect()
}

/// [`prepare`] followed by [`train_offline`].
pub fn fit_model(series: &LoadSeries, train_days: usize, opts: &FitOptions) -> Result<TrainOutcome> {
    let prepared = prepare(series, train_days, opts)?;
    train_offline(&prepared.samples, prepared.setup, &opts.train)
}
