//! Offline training, online correction and checkpoints.

mod checkpoint;
mod config;
mod loss;
mod offline;
mod online;
mod pipeline;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ModelSetup, FORMAT_VERSION};
pub use config::{CorrectionMode, CorrectionPolicy, TrainConfig};
pub use loss::{
    batch_loss, dataset_loss, embedding_perturbation, loss_and_grads, perturbed_loss, perturbed_loss_and_grads,
    perturbed_params, PerturbedStep,
};
pub use offline::{split_indices, train_offline, train_offline_from, EpochRecord, TrainOutcome};
pub use online::{correct_online, CorrectionOutcome};
pub use pipeline::{build_samples, fit_model, prepare, FitOptions, Prepared};

#[cfg(test)]
mod tests;
