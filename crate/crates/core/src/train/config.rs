use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Scale λ of the embedding perturbation.
    pub lambda_perturb: f64,
    pub lr_offline: f64,
    pub lr_online: f64,
    pub batch_size: usize,
    pub max_epochs_offline: usize,
    /// Epochs without sufficient validation improvement before stopping.
    pub patience_offline: usize,
    pub max_epochs_online: usize,
    pub tolerance_online: usize,
    pub validation_fraction: f64,
    /// Minimum improvement (normalized loss units) that resets patience.
    pub early_stop_epsilon: f64,
    pub seed: u64,
    /// Global gradient-norm clip; off by default.
    pub clip_norm: Option<f64>,
    /// Initialize the forget-gate bias to 1 instead of 0.
    pub forget_bias_one: bool,
    /// Use the perturbed loss (instead of the plain approximation loss)
    /// when fine-tuning the output block online.
    pub online_perturbed: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_perturb: 1.0,
            lr_offline: 0.005,
            lr_online: 0.01,
            batch_size: 56,
            max_epochs_offline: 150,
            patience_offline: 7,
            max_epochs_online: 10,
            tolerance_online: 5,
            validation_fraction: 0.10,
            early_stop_epsilon: 1e-4,
            seed: 0,
            clip_norm: None,
            forget_bias_one: false,
            online_perturbed: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.lambda_perturb >= 0.0 && self.lambda_perturb.is_finite()) {
            return bad("train.lambda_perturb must be a nonnegative number");
        }
        if !(self.lr_offline > 0.0 && self.lr_online > 0.0) {
            return bad("train learning rates must be positive");
        }
        if self.batch_size == 0 || self.patience_offline == 0 || self.tolerance_online == 0 {
            return bad("train.batch_size, patience_offline and tolerance_online must be positive");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("train.validation_fraction must lie in (0, 1)");
        }
        if self.early_stop_epsilon.is_nan() || self.early_stop_epsilon < 0.0 {
            return bad("train.early_stop_epsilon must be nonnegative");
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return bad("train.clip_norm must be positive");
            }
        }
        Ok(())
    }

    pub fn forget_bias(&self) -> f64 {
        if self.forget_bias_one {
            1.0
        } else {
            0.0
        }
    }
}

/// How the model is updated during deployment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectionMode {
    /// Fine-tune only the output block.
    FineTuneOutput,
    /// Update every parameter.
    RetrainAll,
    /// Never update.
    None,
}

impl CorrectionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CorrectionMode::FineTuneOutput => "fine-tune-output",
            CorrectionMode::RetrainAll => "retrain-all",
            CorrectionMode::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            CorrectionMode::FineTuneOutput,
            CorrectionMode::RetrainAll,
            CorrectionMode::None,
        ]
        .into_iter()
        .find(|m| m.as_str() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectionPolicy {
    pub cadence_days: usize,
    pub history_days: usize,
    pub mode: CorrectionMode,
}

impl Default for CorrectionPolicy {
    fn default() -> Self {
        CorrectionPolicy {
            cadence_days: 7,
            history_days: 90,
            mode: CorrectionMode::FineTuneOutput,
        }
    }
}

impl CorrectionPolicy {
    pub fn none() -> Self {
        CorrectionPolicy {
            mode: CorrectionMode::None,
            ..CorrectionPolicy::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cadence_days == 0 {
            return Err(Error::Config("correction.cadence_days must be at least 1".into()));
        }
        if self.history_days < self.cadence_days {
            return Err(Error::Config(
                "correction.history_days must be at least cadence_days".into(),
            ));
        }
        Ok(())
    }
}
