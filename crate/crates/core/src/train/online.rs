//! Periodic correction of a deployed model on recent data.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::WindowSample;
use crate::model::{bind, head_forward, head_on_tape, hidden_features, Batch, ModelParameters, ParamGroup, ParamName};
use crate::numcore::{AdamState, Gradients, Tape, Tensor};

use super::checkpoint::Checkpoint;
use super::config::{CorrectionMode, CorrectionPolicy, TrainConfig};
use super::loss::{dataset_loss, mean_l1, perturbed_loss_and_grads};
use super::offline::{apply_step, diverged};

#[derive(Clone, Debug)]
pub struct CorrectionOutcome {
    pub checkpoint: Checkpoint,
    pub epochs_run: usize,
    /// Γ1 over the most recent `cadence_days` windows before the update.
    pub recent_loss_before: f64,
    pub recent_loss_after: f64,
}

/// Updates `ckpt` on `recent` windows according to `policy.mode`. The
/// optimizer state is fresh on every call and shuffling is seeded from
/// `config.seed`.
pub fn correct_online(
    ckpt: &Checkpoint,
    recent: &[WindowSample],
    config: &TrainConfig,
    policy: &CorrectionPolicy,
) -> Result<CorrectionOutcome> {
    config.validate()?;
    policy.validate()?;
    if recent.is_empty() {
        return Err(Error::InvalidArgument(
            "online correction needs at least one recent window".into(),
        ));
    }
    let week = &recent[recent.len().saturating_sub(policy.cadence_days)..];
    match policy.mode {
        CorrectionMode::None => {
            let l = dataset_loss(week, &ckpt.params)?;
            Ok(CorrectionOutcome {
                checkpoint: ckpt.clone(),
                epochs_run: 0,
                recent_loss_before: l,
                recent_loss_after: l,
            })
        }
        CorrectionMode::FineTuneOutput => fine_tune_output(ckpt, recent, week.len(), config),
        CorrectionMode::RetrainAll => retrain_all(ckpt, recent, week.len(), config),
    }
}

fn is_output(n: ParamName) -> bool {
    n.group() == ParamGroup::Output
}

fn trainable_indices(params: &ModelParameters, keep: impl Fn(ParamName) -> bool) -> Vec<usize> {
    params
        .names()
        .iter()
        .enumerate()
        .filter(|(_, &n)| keep(n))
        .map(|(i, _)| i)
        .collect()
}

/// Shared epoch loop. `step` performs one update on a batch of indices;
/// `per_sample_loss` returns the loss of every recent window.
struct Schedule<'a> {
    config: &'a TrainConfig,
    n: usize,
    week: usize,
}

impl Schedule<'_> {
    fn run(
        &self,
        params: &mut ModelParameters,
        mut step: impl FnMut(&mut ModelParameters, &[usize], usize, usize) -> Result<()>,
        per_sample_loss: impl Fn(&ModelParameters) -> Result<Vec<f64>>,
    ) -> Result<(usize, f64, f64)> {
        let losses = per_sample_loss(params)?;
        let week_before = tail_mean(&losses, self.week);
        let mut best = (mean(&losses), params.clone(), week_before);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut order: Vec<usize> = (0..self.n).collect();
        let mut stale = 0;
        let mut epochs_run = 0;
        for epoch in 1..=self.config.max_epochs_online {
            order.shuffle(&mut rng);
            for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
                step(params, chunk, epoch, b)?;
            }
            epochs_run = epoch;
            let losses = per_sample_loss(params).map_err(|e| diverged(e, epoch, usize::MAX))?;
            let l = mean(&losses);
            if best.0 - l > self.config.early_stop_epsilon {
                best = (l, params.clone(), tail_mean(&losses, self.week));
                stale = 0;
            } else {
                stale += 1;
                if stale >= self.config.tolerance_online {
                    break;
                }
            }
        }
        *params = best.1;
        Ok((epochs_run, week_before, best.2))
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn tail_mean(v: &[f64], k: usize) -> f64 {
    mean(&v[v.len() - k..])
}

fn per_sample_l1(targets: &[WindowSample], preds: &[Vec<f64>]) -> Vec<f64> {
    targets
        .iter()
        .zip(preds)
        .map(|(s, p)| mean_l1(std::iter::once(s.y.as_slice()), std::slice::from_ref(p)))
        .collect()
}

fn check_finite(grads: &Gradients, epoch: usize, batch: usize) -> Result<()> {
    if grads.iter().all(|(_, g)| g.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence {
            epoch,
            batch,
            reason: "non-finite gradient during online correction".into(),
        })
    }
}

fn fine_tune_output(
    ckpt: &Checkpoint,
    recent: &[WindowSample],
    week: usize,
    config: &TrainConfig,
) -> Result<CorrectionOutcome> {
    let mut params = ckpt.params.clone();
    // The hidden vectors do not depend on the output block, so they are
    // computed once and reused for every epoch.
    let hidden = hidden_features(&params, recent)?;
    let width = params.dims().concat_dim();
    let out_len = params.dims().out_len;
    let trainable = trainable_indices(&params, is_output);
    let mut adam = AdamState::new(trainable.iter().map(|&i| params.tensors()[i].shape()));

    let step = |params: &mut ModelParameters, chunk: &[usize], epoch: usize, b: usize| -> Result<()> {
        let grads = if config.online_perturbed {
            let refs: Vec<&WindowSample> = chunk.iter().map(|&i| &recent[i]).collect();
            let batch = Batch::new(&refs, params.dims())?;
            perturbed_loss_and_grads(&batch, params, config.lambda_perturb, is_output)
                .map_err(|e| diverged(e, epoch, b))?
                .grads
        } else {
            let mut tape = Tape::new();
            let p = bind(&mut tape, params, is_output)?;
            let h = tape.constant(Tensor::matrix(
                chunk.len(),
                width,
                chunk.iter().flat_map(|&i| hidden[i].iter().copied()).collect(),
            )?)?;
            let y = tape.constant(Tensor::matrix(
                chunk.len(),
                out_len,
                chunk.iter().flat_map(|&i| recent[i].y.iter().copied()).collect(),
            )?)?;
            let pred = head_on_tape(&mut tape, &p, h).map_err(|e| diverged(e, epoch, b))?;
            let loss = tape.mean_abs_error(pred, y).map_err(|e| diverged(e, epoch, b))?;
            tape.backward(loss)?
        };
        check_finite(&grads, epoch, b)?;
        apply_step(
            params,
            &trainable,
            &grads,
            &mut adam,
            config.lr_online,
            config.clip_norm,
        )
        .map_err(|e| diverged(e, epoch, b))
    };
    let losses = |p: &ModelParameters| Ok(per_sample_l1(recent, &head_forward(p, &hidden)?));
    let sched = Schedule {
        config,
        n: recent.len(),
        week,
    };
    let (epochs_run, before, after) = sched.run(&mut params, step, losses)?;
    Ok(CorrectionOutcome {
        checkpoint: Checkpoint { params, ..ckpt.clone() },
        epochs_run,
        recent_loss_before: before,
        recent_loss_after: after,
    })
}

fn retrain_all(
    ckpt: &Checkpoint,
    recent: &[WindowSample],
    week: usize,
    config: &TrainConfig,
) -> Result<CorrectionOutcome> {
    let mut params = ckpt.params.clone();
    let trainable = trainable_indices(&params, |_| true);
    let mut adam = AdamState::new(trainable.iter().map(|&i| params.tensors()[i].shape()));
    let step = |params: &mut ModelParameters, chunk: &[usize], epoch: usize, b: usize| -> Result<()> {
        let refs: Vec<&WindowSample> = chunk.iter().map(|&i| &recent[i]).collect();
        let batch = Batch::new(&refs, params.dims())?;
        let s = perturbed_loss_and_grads(&batch, params, config.lambda_perturb, |_| true)
            .map_err(|e| diverged(e, epoch, b))?;
        check_finite(&s.grads, epoch, b)?;
        apply_step(
            params,
            &trainable,
            &s.grads,
            &mut adam,
            config.lr_online,
            config.clip_norm,
        )
        .map_err(|e| diverged(e, epoch, b))
    };
    let losses = |p: &ModelParameters| Ok(per_sample_l1(recent, &crate::model::predict(p, recent)?));
    let sched = Schedule {
        config,
        n: recent.len(),
        week,
    };
    let (epochs_run, before, after) = sched.run(&mut params, step, losses)?;
    Ok(CorrectionOutcome {
        checkpoint: Checkpoint { params, ..ckpt.clone() },
        epochs_run,
        recent_loss_before: before,
        recent_loss_after: after,
    })
}
