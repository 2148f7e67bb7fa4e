//! Approximation loss and its embedding-perturbed counterpart.

use crate::error::Result;
use crate::features::WindowSample;
use crate::model::{bind, forward_on_tape, predict, Batch, ModelParameters, ParamGroup, ParamName};
use crate::numcore::{Gradients, ParamId, Tape, Tensor};

/// Mean over samples of the 1-norm of `Y − Ŷ`, in normalized units.
pub fn batch_loss(samples: &[&WindowSample], params: &ModelParameters) -> Result<f64> {
    let batch = Batch::new(samples, params.dims())?;
    let mut tape = Tape::new();
    let p = bind(&mut tape, params, |_| false)?;
    let pred = forward_on_tape(&mut tape, &p, params.dims(), &batch)?;
    let target = tape.constant(batch.y.clone())?;
    let loss = tape.mean_abs_error(pred, target)?;
    Ok(tape.value(loss).data()[0])
}

/// [`batch_loss`] over an arbitrarily large set, evaluated in chunks and
/// reduced in sample order.
pub fn dataset_loss(samples: &[WindowSample], params: &ModelParameters) -> Result<f64> {
    let preds = predict(params, samples)?;
    Ok(mean_l1(samples.iter().map(|s| s.y.as_slice()), &preds))
}

pub(crate) fn mean_l1<'a>(targets: impl Iterator<Item = &'a [f64]>, preds: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for (y, p) in targets.zip(preds) {
        total += y.iter().zip(p).map(|(a, b)| (a - b).abs()).sum::<f64>();
        n += 1;
    }
    total / n as f64
}

/// Loss and gradients for the parameters selected by `trainable`.
/// Gradients are keyed by `ParamId(storage index)`.
pub fn loss_and_grads(
    batch: &Batch,
    params: &ModelParameters,
    trainable: impl Fn(ParamName) -> bool,
) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new();
    let p = bind(&mut tape, params, trainable)?;
    let pred = forward_on_tape(&mut tape, &p, params.dims(), batch)?;
    let target = tape.constant(batch.y.clone())?;
    let loss = tape.mean_abs_error(pred, target)?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).data()[0], grads))
}

/// Embedding perturbation `λ ∇_{W_e} Γ1`, one entry per embedding-group
/// parameter, together with Γ1 at the unperturbed point.
pub fn embedding_perturbation(
    batch: &Batch,
    params: &ModelParameters,
    lambda: f64,
) -> Result<(f64, Vec<(ParamName, Tensor)>)> {
    let (gamma1, grads) = loss_and_grads(batch, params, |n| n.group() == ParamGroup::Embedding)?;
    let delta = params
        .names()
        .iter()
        .enumerate()
        .filter(|(_, n)| n.group() == ParamGroup::Embedding)
        .map(|(i, &n)| {
            let g = grads.get(ParamId(i)).expect("embedding parameter bound as trainable");
            (n, g.map(|v| lambda * v))
        })
        .collect();
    Ok((gamma1, delta))
}

/// Copy of `params` with the embedding group shifted by `delta`.
pub fn perturbed_params(params: &ModelParameters, delta: &[(ParamName, Tensor)]) -> Result<ModelParameters> {
    let mut out = params.clone();
    for (name, d) in delta {
        out.get_mut(*name).axpy(1.0, d)?;
    }
    Ok(out)
}

/// Result of one perturbed-loss evaluation.
pub struct PerturbedStep {
    /// Γ1 at the unperturbed parameters.
    pub gamma1: f64,
    /// Γ1 at the perturbed parameters.
    pub gamma: f64,
    /// Gradient of Γ with the perturbation held constant.
    pub grads: Gradients,
}

/// Γ and its gradient. With `lambda == 0` no perturbation pass runs, so
/// the result equals [`loss_and_grads`] exactly.
pub fn perturbed_loss_and_grads(
    batch: &Batch,
    params: &ModelParameters,
    lambda: f64,
    trainable: impl Fn(ParamName) -> bool,
) -> Result<PerturbedStep> {
    if lambda == 0.0 {
        let (gamma, grads) = loss_and_grads(batch, params, trainable)?;
        return Ok(PerturbedStep {
            gamma1: gamma,
            gamma,
            grads,
        });
    }
    let (gamma1, delta) = embedding_perturbation(batch, params, lambda)?;
    let shifted = perturbed_params(params, &delta)?;
    let (gamma, grads) = loss_and_grads(batch, &shifted, trainable)?;
    Ok(PerturbedStep { gamma1, gamma, grads })
}

/// Γ: the approximation loss evaluated with perturbed embedding weights.
pub fn perturbed_loss(samples: &[&WindowSample], params: &ModelParameters, lambda: f64) -> Result<f64> {
    if lambda == 0.0 {
        return batch_loss(samples, params);
    }
    let batch = Batch::new(samples, params.dims())?;
    let (_, delta) = embedding_perturbation(&batch, params, lambda)?;
    batch_loss(samples, &perturbed_params(params, &delta)?)
}
