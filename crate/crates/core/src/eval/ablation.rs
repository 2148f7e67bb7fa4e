//! Feature ablation and hyperparameter sweeps.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::LoadSeries;
use crate::error::{Error, Result};
use crate::features::FeatureMask;
use crate::train::{fit_model, Checkpoint, CorrectionPolicy, FitOptions};

use super::backtest::{backtest, ForecastReport};
use super::metrics::MetricTriple;
use super::report::summary_csv;
use super::svg::bar_chart;

/// The four feature configurations compared in the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// All features.
    Proposed,
    /// Load history only: no one-hots, no FCNN branch.
    Model1,
    /// No similarity features.
    Model2,
    /// No statistical features.
    Model3,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Proposed, Variant::Model1, Variant::Model2, Variant::Model3];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Proposed => "proposed",
            Variant::Model1 => "model1",
            Variant::Model2 => "model2",
            Variant::Model3 => "model3",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.as_str() == s)
    }

    pub fn mask(self) -> FeatureMask {
        let on = FeatureMask::FULL;
        match self {
            Variant::Proposed => on,
            Variant::Model1 => FeatureMask {
                time_index: false,
                stats: false,
                similarity: false,
            },
            Variant::Model2 => FeatureMask {
                similarity: false,
                ..on
            },
            Variant::Model3 => FeatureMask { stats: false, ..on },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Train on the first `train_days` days, then backtest the rest.
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub checkpoint: Checkpoint,
    pub report: ForecastReport,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

pub fn run_experiment(
    series: &LoadSeries,
    train_days: usize,
    opts: &FitOptions,
    policy: &CorrectionPolicy,
    label: &str,
) -> Result<ExperimentResult> {
    let out = fit_model(series, train_days, opts)?;
    let bt = backtest(&out.checkpoint, series, train_days..series.num_days(), policy, label)?;
    Ok(ExperimentResult {
        checkpoint: out.checkpoint,
        report: bt.report,
        epochs_run: out.epochs_run,
        best_epoch: out.best_epoch,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub metrics: MetricTriple,
    pub epochs_run: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Mean MAPE per variant over seeds.
    pub fn mean_mape(&self) -> BTreeMap<Variant, f64> {
        let mut acc: BTreeMap<Variant, (f64, usize)> = BTreeMap::new();
        for r in &self.rows {
            let e = acc.entry(r.variant).or_default();
            e.0 += r.metrics.mape_or_nan();
            e.1 += 1;
        }
        acc.into_iter().map(|(v, (s, n))| (v, s / n as f64)).collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let rows: Vec<(String, MetricTriple)> = self
            .rows
            .iter()
            .map(|r| (format!("{}/seed{}", r.variant, r.seed), r.metrics))
            .collect();
        summary_csv(&rows)
    }

    pub fn to_svg(&self) -> String {
        let bars: Vec<(String, f64)> = self.mean_mape().into_iter().map(|(v, m)| (v.to_string(), m)).collect();
        bar_chart("Feature ablation: mean test MAPE", "MAPE (%)", &bars)
    }
}

/// Trains and backtests every variant for every seed. All variants share
/// the base options apart from the feature mask and the seed.
pub fn run_ablation(
    series: &LoadSeries,
    train_days: usize,
    variants: &[Variant],
    seeds: &[u64],
    base: &FitOptions,
    policy: &CorrectionPolicy,
) -> Result<AblationTable> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "ablation needs at least one variant and one seed".into(),
        ));
    }
    let mut table = AblationTable::default();
    for &seed in seeds {
        for &variant in variants {
            let mut opts = base.clone();
            opts.features = variant.mask();
            opts.train.seed = seed;
            let r = run_experiment(series, train_days, &opts, policy, variant.as_str())?;
            table.rows.push(AblationRow {
                variant,
                seed,
                metrics: r.report.aggregate,
                epochs_run: r.epochs_run,
            });
        }
    }
    Ok(table)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NClusters,
    Lambda,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::NClusters => "n_c",
            SweepAxis::Lambda => "lambda",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: SweepAxis,
    pub value: f64,
    pub metrics: MetricTriple,
}

/// One distinct train + backtest run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub n_clusters: usize,
    pub lambda: f64,
    pub metrics: MetricTriple,
    pub epochs_run: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Every grid point along each axis, in request order.
    pub points: Vec<SweepPoint>,
    /// The distinct configurations actually trained.
    pub runs: Vec<SweepRun>,
}

impl SweepResult {
    /// One row per distinct run.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Data(format!("csv: {e}"));
        w.write_record([
            "n_c",
            "lambda",
            "mae_mw",
            "mape_pct",
            "rmse_mw",
            "mape_excluded_hours",
            "epochs_run",
        ])
        .map_err(err)?;
        for r in &self.runs {
            w.write_record([
                r.n_clusters.to_string(),
                r.lambda.to_string(),
                r.metrics.mae.to_string(),
                r.metrics.mape.map_or_else(String::new, |m| m.to_string()),
                r.metrics.rmse.to_string(),
                r.metrics.mape_excluded.to_string(),
                r.epochs_run.to_string(),
            ])
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_svg(&self, axis: SweepAxis) -> String {
        let bars: Vec<(String, f64)> = self
            .points
            .iter()
            .filter(|p| p.axis == axis)
            .map(|p| (p.value.to_string(), p.metrics.mape_or_nan()))
            .collect();
        bar_chart(&format!("Sensitivity to {}", axis.as_str()), "MAPE (%)", &bars)
    }
}

/// Varies one hyperparameter at a time around the base options. Identical
/// configurations are run once and shared between the axes.
pub fn run_sweep(
    series: &LoadSeries,
    train_days: usize,
    n_c_values: &[usize],
    lambda_values: &[f64],
    base: &FitOptions,
    policy: &CorrectionPolicy,
) -> Result<SweepResult> {
    if n_c_values.is_empty() && lambda_values.is_empty() {
        return Err(Error::InvalidArgument("sweep grid is empty".into()));
    }
    let mut result = SweepResult::default();
    let grid = n_c_values
        .iter()
        .map(|&n_c| (SweepAxis::NClusters, n_c as f64, n_c, base.train.lambda_perturb))
        .chain(
            lambda_values
                .iter()
                .map(|&l| (SweepAxis::Lambda, l, base.n_clusters, l)),
        );
    for (axis, value, n_c, lambda) in grid {
        let done = result
            .runs
            .iter()
            .find(|r| r.n_clusters == n_c && r.lambda.to_bits() == lambda.to_bits());
        let metrics = match done {
            Some(r) => r.metrics,
            None => {
                let mut opts = base.clone();
                opts.n_clusters = n_c;
                opts.train.lambda_perturb = lambda;
                let label = format!("n_c={n_c},lambda={lambda}");
                let r = run_experiment(series, train_days, &opts, policy, &label)?;
                result.runs.push(SweepRun {
                    n_clusters: n_c,
                    lambda,
                    metrics: r.report.aggregate,
                    epochs_run: r.epochs_run,
                });
                r.report.aggregate
            }
        };
        result.points.push(SweepPoint { axis, value, metrics });
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};
    use crate::model::ModelDims;
    use crate::train::TrainConfig;

    fn small_series() -> LoadSeries {
        let cfg = SynthConfig {
            years: 1,
            ..SynthConfig::default()
        };
        let s = synth_generate(&cfg).unwrap();
        // 80 days: 60 to train, 20 to test
        LoadSeries::new(s.start(), s.values()[..80 * 24].to_vec(), s.holidays().clone()).unwrap()
    }

    fn tiny_opts() -> FitOptions {
        FitOptions {
            n_clusters: 3,
            d: 4,
            n_h: 6,
            train: TrainConfig {
                max_epochs_offline: 1,
                seed: 1,
                ..TrainConfig::default()
            },
            ..FitOptions::default()
        }
    }

    #[test]
    fn variant_dimensions() {
        let dims = |v: Variant| ModelDims::for_features(v.mask(), 20, 10, 128);
        assert_eq!(dims(Variant::Proposed).q_dim, 32);
        assert_eq!(dims(Variant::Model2).q_dim, 12);
        assert_eq!(dims(Variant::Model3).q_dim, 29);
        let m1 = dims(Variant::Model1);
        assert_eq!((m1.in_dim, m1.q_dim), (1, 0));
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.as_str()), Some(v));
        }
    }

    #[test]
    fn singleton_ablation_equals_direct_run() {
        let s = small_series();
        let opts = tiny_opts();
        let table = run_ablation(&s, 60, &[Variant::Proposed], &[1], &opts, &CorrectionPolicy::none()).unwrap();
        let direct = run_experiment(&s, 60, &opts, &CorrectionPolicy::none(), "proposed").unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].metrics, direct.report.aggregate);
        assert!(table.to_csv().unwrap().starts_with("label,mae_mw"));
    }

    #[test]
    fn sweep_counts_distinct_runs_and_is_deterministic() {
        let s = small_series();
        let base = FitOptions {
            n_clusters: 4,
            ..tiny_opts()
        };
        let a = run_sweep(&s, 60, &[3, 4], &[1.0], &base, &CorrectionPolicy::none()).unwrap();
        assert_eq!(a.runs.len(), 2);
        assert_eq!(a.to_csv().unwrap().lines().count(), 3);
        assert_eq!(a.points.len(), 3);
        assert_eq!(a.points[1].metrics, a.points[2].metrics);
        let b = run_sweep(&s, 60, &[3, 4], &[1.0], &base, &CorrectionPolicy::none()).unwrap();
        assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
        assert!(a.to_svg(SweepAxis::NClusters).contains("<rect x="));
        assert!(run_sweep(&s, 60, &[], &[], &base, &CorrectionPolicy::none()).is_err());
    }
}
