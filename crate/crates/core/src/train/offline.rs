//! Offline training with perturbed-embedding loss and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::WindowSample;
use crate::model::{init_params_with, Batch, ModelParameters, ParamName};
use crate::numcore::{AdamState, Gradients, ParamId, Tensor};

use super::checkpoint::{Checkpoint, ModelSetup};
use super::config::TrainConfig;
use super::loss::{dataset_loss, perturbed_loss_and_grads};

/// One line of the training history. Epoch 0 is the untrained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean perturbed loss Γ over training batches (weighted by batch size).
    /// For epoch 0 this is the unperturbed loss on the training split.
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
    /// Number of gradient steps each input sample contributed to.
    pub gradient_uses: Vec<u32>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Random train/validation split of `n` samples. Both index lists are sorted.
pub fn split_indices(n: usize, validation_fraction: f64, rng: &mut ChaCha8Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_val = ((n as f64) * validation_fraction).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::Data(format!(
            "{n} samples cannot be split with validation fraction {validation_fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// Trains a freshly initialized model.
pub fn train_offline(samples: &[WindowSample], setup: ModelSetup, config: &TrainConfig) -> Result<TrainOutcome> {
    let params = init_params_with(setup.dims, config.seed, config.forget_bias())?;
    train_offline_from(samples, setup, params, config)
}

/// Trains starting from the given parameters.
pub fn train_offline_from(
    samples: &[WindowSample],
    setup: ModelSetup,
    mut params: ModelParameters,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    setup.validate()?;
    if *params.dims() != setup.dims {
        return Err(Error::InvalidArgument("parameter dims differ from model setup".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (train_idx, val_idx) = split_indices(samples.len(), config.validation_fraction, &mut rng)?;
    let train_set: Vec<WindowSample> = train_idx.iter().map(|&i| samples[i].clone()).collect();
    let val_set: Vec<WindowSample> = val_idx.iter().map(|&i| samples[i].clone()).collect();

    let trainable: Vec<usize> = (0..params.names().len()).collect();
    let mut adam = AdamState::new(trainable.iter().map(|&i| params.tensors()[i].shape()));
    let mut uses = vec![0u32; samples.len()];

    let v0 = dataset_loss(&val_set, &params)?;
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: dataset_loss(&train_set, &params)?,
        validation_loss: v0,
    }];
    let mut best = (v0, params.clone(), 0usize);
    let mut stale = 0usize;
    let mut epochs_run = 0usize;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.max_epochs_offline {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let refs: Vec<&WindowSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch = Batch::new(&refs, params.dims())?;
            let step = perturbed_loss_and_grads(&batch, &params, config.lambda_perturb, |_| true)
                .map_err(|e| diverged(e, epoch, b))?;
            if !step.gamma.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    reason: "non-finite loss".into(),
                });
            }
            apply_step(
                &mut params,
                &trainable,
                &step.grads,
                &mut adam,
                config.lr_offline,
                config.clip_norm,
            )
            .map_err(|e| diverged(e, epoch, b))?;
            for &i in chunk {
                uses[train_idx[i]] += 1;
            }
            loss_sum += step.gamma * chunk.len() as f64;
        }
        let val = dataset_loss(&val_set, &params).map_err(|e| diverged(e, epoch, usize::MAX))?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            validation_loss: val,
        });
        epochs_run = epoch;
        if best.0 - val > config.early_stop_epsilon {
            best = (val, params.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience_offline {
                break;
            }
        }
    }

    let (_, best_params, best_epoch) = best;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            setup,
            params: best_params,
            train_config: config.clone(),
            history,
        },
        train_indices: train_idx,
        validation_indices: val_idx,
        gradient_uses: uses,
        best_epoch,
        epochs_run,
    })
}

pub(crate) fn diverged(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite { op } => Error::Divergence {
            epoch,
            batch,
            reason: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

/// Optional global-norm clipping followed by one Adam update of the
/// parameters at storage indices `trainable`.
pub(crate) fn apply_step(
    params: &mut ModelParameters,
    trainable: &[usize],
    grads: &Gradients,
    adam: &mut AdamState,
    lr: f64,
    clip_norm: Option<f64>,
) -> Result<()> {
    let mut gs: Vec<Tensor> = trainable
        .iter()
        .map(|&i| {
            grads
                .get(ParamId(i))
                .cloned()
                .ok_or_else(|| Error::InvalidArgument(format!("missing gradient for parameter {i}")))
        })
        .collect::<Result<_>>()?;
    if let Some(c) = clip_norm {
        let norm = gs.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
        if norm > c {
            let s = c / norm;
            gs = gs.iter().map(|g| g.map(|v| v * s)).collect();
        }
    }
    let names: Vec<ParamName> = params.names().to_vec();
    let mut slots: Vec<Option<&mut Tensor>> = params.tensors_mut().iter_mut().map(Some).collect();
    let pairs = trainable.iter().zip(&gs).map(|(&i, g)| {
        let p = slots[i]
            .take()
            .unwrap_or_else(|| panic!("duplicate trainable index for {}", names[i]));
        (p, g)
    });
    // Collect first so the borrow of `slots` ends before `step` runs.
    let pairs: Vec<(&mut Tensor, &Tensor)> = pairs.collect();
    adam.step(pairs, lr)
}
