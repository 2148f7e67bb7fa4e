//! Run configuration shared by the command-line tool.
//!
//! The configuration file is TOML written as flat `section.key = value`
//! lines. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::{LoadSeries, SynthConfig, WINDOW_WIDTH};
use crate::error::{Error, Result};
use crate::eval::Variant;
use crate::train::{CorrectionPolicy, FitOptions, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

/// Process exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        _ => EXIT_DATA,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub csv: Option<PathBuf>,
    pub holidays: Option<PathBuf>,
    /// First test day; everything before it is training data.
    pub test_start: Option<NaiveDate>,
    /// Test span counted back from the end when `test_start` is unset.
    pub test_days: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            csv: None,
            holidays: None,
            test_start: None,
            test_days: 365,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub n_clusters: usize,
    pub d: usize,
    pub n_h: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Proposed,
            n_clusters: 20,
            d: 10,
            n_h: 128,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub correction: CorrectionPolicy,
    pub synth: SynthConfig,
}

/// Every configuration key with a one-line description.
const KEYS: &[(&str, &str)] = &[
    ("data.csv", "hourly load CSV with header timestamp,load_mw"),
    ("data.holidays", "holiday list, one YYYY-MM-DD per line"),
    (
        "data.test_start",
        "first test day (YYYY-MM-DD); earlier days train the model",
    ),
    (
        "data.test_days",
        "test span counted back from the end when test_start is unset",
    ),
    ("model.variant", "feature set: proposed, model1, model2 or model3"),
    ("model.n_clusters", "number of k-means clusters n_c"),
    ("model.d", "embedding width"),
    ("model.n_h", "LSTM and FCNN hidden width"),
    ("train.lambda_perturb", "scale of the embedding perturbation"),
    ("train.lr_offline", "Adam learning rate for offline training"),
    ("train.lr_online", "Adam learning rate for online correction"),
    ("train.batch_size", "windows per batch"),
    ("train.max_epochs_offline", "upper bound on offline epochs"),
    ("train.patience_offline", "epochs without improvement before stopping"),
    ("train.max_epochs_online", "upper bound on epochs per correction"),
    (
        "train.tolerance_online",
        "correction epochs without improvement before stopping",
    ),
    (
        "train.validation_fraction",
        "share of training windows held out for validation",
    ),
    (
        "train.early_stop_epsilon",
        "minimum validation improvement (normalized units)",
    ),
    ("train.seed", "seed for initialization, shuffling and k-means"),
    ("train.clip_norm", "optional global gradient-norm clip"),
    ("train.forget_bias_one", "start the forget-gate bias at 1 instead of 0"),
    (
        "train.online_perturbed",
        "use the perturbed loss when fine-tuning online",
    ),
    ("correction.cadence_days", "days between corrections"),
    (
        "correction.history_days",
        "trailing days of windows used by a correction",
    ),
    ("correction.mode", "fine-tune-output, retrain-all or none"),
    ("synth.start_date", "first day of the synthetic series"),
    ("synth.years", "calendar years generated"),
    ("synth.base_load", "mean load (MW)"),
    ("synth.daily_amplitude", "daily cycle amplitude (MW)"),
    ("synth.weekly_amplitude", "weekly cycle amplitude (MW)"),
    ("synth.trend_slope", "linear trend (MW per year)"),
    ("synth.holiday_dip_fraction", "relative load drop on holidays"),
    (
        "synth.noise_std_fraction",
        "noise standard deviation relative to base_load",
    ),
    (
        "synth.level_shift",
        "optional step change, e.g. { date = \"2021-04-01\", mw = 100.0 }",
    ),
    ("synth.seed", "noise seed"),
];

/// Reference text listing every key, its default and its meaning.
pub fn config_reference() -> String {
    let defaults = toml::Value::try_from(RunConfig::default()).expect("defaults serialize");
    let mut out = String::from("Configuration keys (TOML, `section.key = value`), with defaults:\n");
    let width = KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (key, doc) in KEYS {
        let (section, name) = key.split_once('.').expect("dotted key");
        let value = defaults
            .get(section)
            .and_then(|s| s.get(name))
            .map_or_else(|| "(unset)".to_string(), toml::Value::to_string);
        out.push_str(&format!("  {key:<width$} = {value:<12} {doc}\n"));
    }
    out
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_table(text.parse::<toml::Table>().map_err(config_err)?)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (if given) and applies `overrides`, each a
    /// `section.key=value` string whose value is TOML (bare words are
    /// taken as strings).
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => fs::read_to_string(p)
                .map_err(|e| Error::io(p, e))?
                .parse::<toml::Table>()
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => toml::Table::new(),
        };
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not section.key=value")))?;
            let (section, name) = key
                .trim()
                .split_once('.')
                .ok_or_else(|| Error::Config(format!("override key `{key}` needs a section")))?;
            let value = parse_value(raw.trim());
            table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{section}` is not a section")))?
                .insert(name.to_string(), value);
        }
        Self::from_table(table)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.correction.validate()?;
        self.synth.validate()?;
        self.fit_options().dims().validate()?;
        if self.model.n_clusters == 0 {
            return Err(Error::Config("model.n_clusters must be at least 1".into()));
        }
        if self.data.test_days == 0 {
            return Err(Error::Config("data.test_days must be at least 1".into()));
        }
        Ok(())
    }

    /// Threads one seed to every stochastic component.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.synth.seed = seed;
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            features: self.model.variant.mask(),
            n_clusters: self.model.n_clusters,
            d: self.model.d,
            n_h: self.model.n_h,
            train: self.train.clone(),
        }
    }

    /// Number of leading days used for training.
    pub fn train_days(&self, series: &LoadSeries) -> Result<usize> {
        let n = series.num_days();
        let days = match self.data.test_start {
            Some(date) => series.day_index(date).ok_or_else(|| {
                Error::Data(format!(
                    "data.test_start {date} is outside the series ({} to {})",
                    series.day_date(0),
                    series.day_date(n - 1)
                ))
            })?,
            None => n.checked_sub(self.data.test_days).ok_or_else(|| {
                Error::Data(format!(
                    "series has {n} days, fewer than data.test_days = {}",
                    self.data.test_days
                ))
            })?,
        };
        if days * 24 < WINDOW_WIDTH + 24 || days >= n {
            return Err(Error::Data(format!(
                "split at day {days} of {n} leaves no room for training windows or no test days"
            )));
        }
        Ok(days)
    }
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
