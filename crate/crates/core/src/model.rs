//! Hybrid LSTM + FCNN forecaster.
//!
//! ```text
//! s_j   = W_e x_j + b_e                         (per history hour)
//! h_168 = LSTM(s_1 … s_168), h_0 = c_0 = 0
//! h_Q   = W_f3 φ(W_f2 φ(W_f1 Q + b_f1) + b_f2) + b_f3
//! Ŷ     = W_o2 φ(W_o1 [h_168 ‖ h_Q] + b_o1) + b_o2
//! ```
//!
//! All batched computations run on a [`Tape`] with one row per sample. The
//! history input of a batch is stored time-major: rows `t·B .. (t+1)·B`
//! hold hour `t` of every sample.

use std::fmt;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMask, WindowSample};
use crate::numcore::{ParamId, Shape, Tape, Tensor, Var};

/// Batch size used when evaluating many samples at once.
pub const EVAL_CHUNK: usize = 56;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub seq_len: usize,
    pub in_dim: usize,
    /// Embedding width.
    pub d: usize,
    /// Hidden width shared by the LSTM, FCNN and output blocks.
    pub n_h: usize,
    /// Non-temporal input length; 0 drops the FCNN branch entirely.
    pub q_dim: usize,
    pub out_len: usize,
}

impl ModelDims {
    /// Default full-size configuration for `n_c` clusters.
    pub fn default_for(n_c: usize) -> Self {
        ModelDims {
            seq_len: 168,
            in_dim: 34,
            d: 10,
            n_h: 128,
            q_dim: 12 + n_c,
            out_len: 24,
        }
    }

    pub fn for_features(mask: FeatureMask, n_c: usize, d: usize, n_h: usize) -> Self {
        ModelDims {
            seq_len: 168,
            in_dim: mask.row_width(),
            d,
            n_h,
            q_dim: mask.q_dim(n_c),
            out_len: 24,
        }
    }

    pub fn has_fcnn(&self) -> bool {
        self.q_dim > 0
    }

    /// Width of the concatenated hidden vector fed to the output block.
    pub fn concat_dim(&self) -> usize {
        if self.has_fcnn() {
            2 * self.n_h
        } else {
            self.n_h
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ModelDims {
            seq_len,
            in_dim,
            d,
            n_h,
            out_len,
            ..
        } = *self;
        if seq_len == 0 || in_dim == 0 || d == 0 || n_h == 0 || out_len == 0 {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        // a scalar input is lifted, not reduced
        if in_dim > 1 && d >= in_dim {
            return Err(Error::Config(format!(
                "embedding width d={d} must be smaller than the input width {in_dim}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamName {
    We,
    Be,
    Wgh,
    Wgs,
    Bg,
    Wih,
    Wis,
    Bi,
    Wfh,
    Wfs,
    Bf,
    Woh,
    Wos,
    Bo,
    Wf1,
    Bf1,
    Wf2,
    Bf2,
    Wf3,
    Bf3,
    Wo1,
    Bo1,
    Wo2,
    Bo2,
}

/// Partition used by perturbation and fine-tuning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Embedding,
    Rest,
    Output,
}

impl ParamName {
    pub const ALL: [ParamName; 24] = {
        use ParamName::*;
        [
            We, Be, Wgh, Wgs, Bg, Wih, Wis, Bi, Wfh, Wfs, Bf, Woh, Wos, Bo, Wf1, Bf1, Wf2, Bf2, Wf3, Bf3, Wo1, Bo1,
            Wo2, Bo2,
        ]
    };

    pub fn as_str(self) -> &'static str {
        use ParamName::*;
        match self {
            We => "W_e",
            Be => "b_e",
            Wgh => "W_gh",
            Wgs => "W_gs",
            Bg => "b_g",
            Wih => "W_ih",
            Wis => "W_is",
            Bi => "b_i",
            Wfh => "W_fh",
            Wfs => "W_fs",
            Bf => "b_f",
            Woh => "W_oh",
            Wos => "W_os",
            Bo => "b_o",
            Wf1 => "W_f1",
            Bf1 => "b_f1",
            Wf2 => "W_f2",
            Bf2 => "b_f2",
            Wf3 => "W_f3",
            Bf3 => "b_f3",
            Wo1 => "W_o1",
            Bo1 => "b_o1",
            Wo2 => "W_o2",
            Bo2 => "b_o2",
        }
    }

    pub fn parse(s: &str) -> Option<ParamName> {
        ParamName::ALL.into_iter().find(|p| p.as_str() == s)
    }

    pub fn group(self) -> ParamGroup {
        use ParamName::*;
        match self {
            We | Be => ParamGroup::Embedding,
            Wo1 | Bo1 | Wo2 | Bo2 => ParamGroup::Output,
            _ => ParamGroup::Rest,
        }
    }

    fn is_fcnn(self) -> bool {
        use ParamName::*;
        matches!(self, Wf1 | Bf1 | Wf2 | Bf2 | Wf3 | Bf3)
    }

    pub fn shape(self, dims: &ModelDims) -> Shape {
        use ParamName::*;
        let ModelDims {
            in_dim,
            d,
            n_h,
            q_dim,
            out_len,
            ..
        } = *dims;
        match self {
            We => Shape::Matrix(d, in_dim),
            Be => Shape::Vector(d),
            Wgh | Wih | Wfh | Woh | Wf2 | Wf3 => Shape::Matrix(n_h, n_h),
            Wgs | Wis | Wfs | Wos => Shape::Matrix(n_h, d),
            Wf1 => Shape::Matrix(n_h, q_dim),
            Wo1 => Shape::Matrix(n_h, dims.concat_dim()),
            Wo2 => Shape::Matrix(out_len, n_h),
            Bo2 => Shape::Vector(out_len),
            Bg | Bi | Bf | Bo | Bf1 | Bf2 | Bf3 | Bo1 => Shape::Vector(n_h),
        }
    }
}

impl fmt::Display for ParamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parameter names present for the given dimensions, in storage order.
pub fn layout(dims: &ModelDims) -> Vec<ParamName> {
    ParamName::ALL
        .into_iter()
        .filter(|p| dims.has_fcnn() || !p.is_fcnn())
        .collect()
}

/// All weights and biases of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters {
    dims: ModelDims,
    names: Vec<ParamName>,
    tensors: Vec<Tensor>,
}

impl ModelParameters {
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let names = layout(&dims);
        let tensors = names.iter().map(|p| Tensor::zeros(p.shape(&dims))).collect();
        Ok(ModelParameters { dims, names, tensors })
    }

    /// Builds parameters from named tensors, checking every shape.
    pub fn from_named(dims: ModelDims, named: Vec<(ParamName, Tensor)>) -> Result<Self> {
        let mut params = ModelParameters::zeros(dims)?;
        if named.len() != params.names.len() {
            return Err(Error::shape(
                "parameters",
                format!("{} tensors for {} parameters", named.len(), params.names.len()),
            ));
        }
        for (name, t) in named {
            params.set(name, t)?;
        }
        Ok(params)
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn names(&self) -> &[ParamName] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamName, &Tensor)> {
        self.names.iter().copied().zip(&self.tensors)
    }

    fn index(&self, name: ParamName) -> Option<usize> {
        self.names.iter().position(|&n| n == name)
    }

    /// Panics if `name` is not part of this model's layout.
    pub fn get(&self, name: ParamName) -> &Tensor {
        &self.tensors[self.index(name).unwrap_or_else(|| panic!("model has no {name}"))]
    }

    pub fn try_get(&self, name: ParamName) -> Option<&Tensor> {
        self.index(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: ParamName) -> &mut Tensor {
        let i = self.index(name).unwrap_or_else(|| panic!("model has no {name}"));
        &mut self.tensors[i]
    }

    pub fn set(&mut self, name: ParamName, value: Tensor) -> Result<()> {
        let i = self
            .index(name)
            .ok_or_else(|| Error::shape("parameters", format!("{name} is not part of this model")))?;
        let want = name.shape(&self.dims);
        if value.shape() != want {
            return Err(Error::shape(
                "parameters",
                format!("{name} expects {want}, got {}", value.shape()),
            ));
        }
        self.tensors[i] = value;
        Ok(())
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Big-endian bytes of every parameter in `group`, in storage order.
    pub fn group_bytes(&self, group: ParamGroup) -> Vec<u8> {
        self.iter()
            .filter(|(n, _)| n.group() == group)
            .flat_map(|(_, t)| t.to_be_bytes())
            .collect()
    }
}

/// Glorot-uniform weights and zero biases.
pub fn init_params(dims: ModelDims, seed: u64) -> Result<ModelParameters> {
    init_params_with(dims, seed, 0.0)
}

/// As [`init_params`], with the forget-gate bias set to `forget_bias`.
pub fn init_params_with(dims: ModelDims, seed: u64, forget_bias: f64) -> Result<ModelParameters> {
    let mut params = ModelParameters::zeros(dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, t) in params.names.clone().into_iter().zip(params.tensors.iter_mut()) {
        match t.shape() {
            Shape::Matrix(rows, cols) => {
                let bound = glorot_bound(rows, cols);
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                for v in t.data_mut() {
                    *v = dist.sample(&mut rng);
                }
            }
            Shape::Vector(_) if name == ParamName::Bf => t.data_mut().fill(forget_bias),
            Shape::Vector(_) => {}
        }
    }
    Ok(params)
}

/// `√(6 / (fan_in + fan_out))` for a `rows × cols` weight.
pub fn glorot_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

/// Tape handles for every parameter of a model.
pub struct Bound {
    names: Vec<ParamName>,
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, name: ParamName) -> Var {
        let i = self
            .names
            .iter()
            .position(|&n| n == name)
            .unwrap_or_else(|| panic!("{name} not bound"));
        self.vars[i]
    }
}

/// Records the parameters on `tape`. Parameters for which `trainable`
/// returns false become constants; the rest get `ParamId(storage index)`.
pub fn bind(tape: &mut Tape, params: &ModelParameters, trainable: impl Fn(ParamName) -> bool) -> Result<Bound> {
    let mut vars = Vec::with_capacity(params.names.len());
    for (i, (name, t)) in params.iter().enumerate() {
        let v = if trainable(name) {
            tape.param(ParamId(i), t.clone())?
        } else {
            tape.constant(t.clone())?
        };
        vars.push(v);
    }
    Ok(Bound {
        names: params.names.clone(),
        vars,
    })
}

/// A stack of samples laid out for batched evaluation.
#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    /// `(seq_len · size) × in_dim`, time-major.
    pub x: Tensor,
    /// `size × q_dim`, absent when the model has no FCNN branch.
    pub q: Option<Tensor>,
    /// `size × out_len`.
    pub y: Tensor,
}

impl Batch {
    pub fn new(samples: &[&WindowSample], dims: &ModelDims) -> Result<Batch> {
        let b = samples.len();
        if b == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let (seq, ind) = (dims.seq_len, dims.in_dim);
        for s in samples {
            if s.x.shape() != Shape::Matrix(seq, ind) || s.q.len() != dims.q_dim || s.y.len() != dims.out_len {
                return Err(Error::shape(
                    "batch",
                    format!(
                        "sample x {} q {} y {} for dims {dims:?}",
                        s.x.shape(),
                        s.q.len(),
                        s.y.len()
                    ),
                ));
            }
        }
        let mut x = Vec::with_capacity(seq * b * ind);
        for t in 0..seq {
            for s in samples {
                x.extend_from_slice(s.x.row(t));
            }
        }
        let q = if dims.has_fcnn() {
            Some(Tensor::matrix(
                b,
                dims.q_dim,
                samples.iter().flat_map(|s| s.q.iter().copied()).collect(),
            )?)
        } else {
            None
        };
        let y = Tensor::matrix(
            b,
            dims.out_len,
            samples.iter().flat_map(|s| s.y.iter().copied()).collect(),
        )?;
        Ok(Batch {
            size: b,
            x: Tensor::matrix(seq * b, ind, x)?,
            q,
            y,
        })
    }
}

enum Act {
    Sigmoid,
    Tanh,
}

fn gate(
    tape: &mut Tape,
    p: &Bound,
    h: Option<Var>,
    s: Var,
    (wh, ws, b): (ParamName, ParamName, ParamName),
    act: Act,
) -> Result<Var> {
    let mut terms = Vec::with_capacity(2);
    if let Some(h) = h {
        terms.push((h, p.var(wh)));
    }
    terms.push((s, p.var(ws)));
    let pre = tape.affine(&terms, Some(p.var(b)))?;
    match act {
        Act::Sigmoid => tape.sigmoid(pre),
        Act::Tanh => tape.tanh(pre),
    }
}

/// One LSTM step. `prev = None` stands for the zero initial state.
fn cell(tape: &mut Tape, p: &Bound, s: Var, prev: Option<(Var, Var)>) -> Result<(Var, Var)> {
    use ParamName::*;
    let h_prev = prev.map(|(h, _)| h);
    let g = gate(tape, p, h_prev, s, (Wgh, Wgs, Bg), Act::Tanh)?;
    let i = gate(tape, p, h_prev, s, (Wih, Wis, Bi), Act::Sigmoid)?;
    let f = gate(tape, p, h_prev, s, (Wfh, Wfs, Bf), Act::Sigmoid)?;
    let ig = tape.hadamard(i, g)?;
    let c = match prev {
        Some((_, c_prev)) => {
            let fc = tape.hadamard(f, c_prev)?;
            tape.add(fc, ig)?
        }
        None => ig,
    };
    let o = gate(tape, p, h_prev, s, (Woh, Wos, Bo), Act::Sigmoid)?;
    let tc = tape.tanh(c)?;
    let h = tape.hadamard(o, tc)?;
    Ok((h, c))
}

/// Final LSTM hidden state for a time-major input of `batch` samples.
fn lstm_on_tape(tape: &mut Tape, p: &Bound, dims: &ModelDims, x: Var, batch: usize) -> Result<Var> {
    let s_all = tape.affine(&[(x, p.var(ParamName::We))], Some(p.var(ParamName::Be)))?;
    let mut state = None;
    for t in 0..dims.seq_len {
        let s = tape.row_block(s_all, t * batch, batch)?;
        state = Some(cell(tape, p, s, state)?);
    }
    Ok(state.expect("seq_len > 0").0)
}

fn fcnn_on_tape(tape: &mut Tape, p: &Bound, q: Var) -> Result<Var> {
    use ParamName::*;
    let a1 = tape.affine(&[(q, p.var(Wf1))], Some(p.var(Bf1)))?;
    let z1 = tape.relu(a1)?;
    let a2 = tape.affine(&[(z1, p.var(Wf2))], Some(p.var(Bf2)))?;
    let z2 = tape.relu(a2)?;
    tape.affine(&[(z2, p.var(Wf3))], Some(p.var(Bf3)))
}

/// Concatenated hidden vector `[h_168 ‖ h_Q]` (or `h_168` alone).
pub fn hidden_on_tape(tape: &mut Tape, p: &Bound, dims: &ModelDims, batch: &Batch) -> Result<Var> {
    let x = tape.constant(batch.x.clone())?;
    let h = lstm_on_tape(tape, p, dims, x, batch.size)?;
    match &batch.q {
        Some(q) => {
            let q = tape.constant(q.clone())?;
            let hq = fcnn_on_tape(tape, p, q)?;
            tape.concat(h, hq)
        }
        None => Ok(h),
    }
}

/// Output block applied to the concatenated hidden vector.
pub fn head_on_tape(tape: &mut Tape, p: &Bound, hidden: Var) -> Result<Var> {
    use ParamName::*;
    let a = tape.affine(&[(hidden, p.var(Wo1))], Some(p.var(Bo1)))?;
    let z = tape.relu(a)?;
    tape.affine(&[(z, p.var(Wo2))], Some(p.var(Bo2)))
}

pub fn forward_on_tape(tape: &mut Tape, p: &Bound, dims: &ModelDims, batch: &Batch) -> Result<Var> {
    let h = hidden_on_tape(tape, p, dims, batch)?;
    head_on_tape(tape, p, h)
}

fn frozen(_: ParamName) -> bool {
    false
}

fn single(tape: &Tape, v: Var) -> Vec<f64> {
    tape.value(v).data().to_vec()
}

fn check_len(op: &'static str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::shape(op, format!("expected length {want}, got {got}")));
    }
    Ok(())
}

/// `W_e x + b_e` for one hourly row.
pub fn embed(x: &[f64], params: &ModelParameters) -> Result<Vec<f64>> {
    check_len("embed", x.len(), params.dims.in_dim)?;
    let mut tape = Tape::new();
    let p = bind(&mut tape, params, frozen)?;
    let xv = tape.constant(Tensor::matrix(1, x.len(), x.to_vec())?)?;
    let s = tape.affine(&[(xv, p.var(ParamName::We))], Some(p.var(ParamName::Be)))?;
    Ok(single(&tape, s))
}

/// Hidden and cell state between LSTM steps.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmCellState {
    pub fn zeros(n_h: usize) -> Self {
        LstmCellState {
            h: vec![0.0; n_h],
            c: vec![0.0; n_h],
        }
    }
}

/// One LSTM step from an embedded input `s` and the previous state.
pub fn lstm_cell(s: &[f64], prev: &LstmCellState, params: &ModelParameters) -> Result<LstmCellState> {
    let n_h = params.dims.n_h;
    check_len("lstm_cell", s.len(), params.dims.d)?;
    check_len("lstm_cell", prev.h.len(), n_h)?;
    check_len("lstm_cell", prev.c.len(), n_h)?;
    let mut tape = Tape::new();
    let p = bind(&mut tape, params, frozen)?;
    let sv = tape.constant(Tensor::matrix(1, s.len(), s.to_vec())?)?;
    let h = tape.constant(Tensor::matrix(1, n_h, prev.h.clone())?)?;
    let c = tape.constant(Tensor::matrix(1, n_h, prev.c.clone())?)?;
    let (h, c) = cell(&mut tape, &p, sv, Some((h, c)))?;
    Ok(LstmCellState {
        h: single(&tape, h),
        c: single(&tape, c),
    })
}

/// Runs embedding + LSTM over one `seq_len × in_dim` input, returning the
/// last hidden state.
pub fn lstm_block(x: &Tensor, params: &ModelParameters) -> Result<Vec<f64>> {
    let dims = params.dims;
    if x.shape() != Shape::Matrix(dims.seq_len, dims.in_dim) {
        return Err(Error::shape(
            "lstm_block",
            format!("input {} for {}x{}", x.shape(), dims.seq_len, dims.in_dim),
        ));
    }
    let mut tape = Tape::new();
    let p = bind(&mut tape, params, frozen)?;
    let xv = tape.constant(x.clone())?;
    let h = lstm_on_tape(&mut tape, &p, &dims, xv, 1)?;
    Ok(single(&tape, h))
}

pub fn fcnn_block(q: &[f64], params: &ModelParameters) -> Result<Vec<f64>> {
    if !params.dims.has_fcnn() {
        return Err(Error::InvalidArgument("model has no FCNN branch".into()));
    }
    check_len("fcnn_block", q.len(), params.dims.q_dim)?;
    let mut tape = Tape::new();
    let p = bind(&mut tape, params, frozen)?;
    let qv = tape.constant(Tensor::matrix(1, q.len(), q.to_vec())?)?;
    let h = fcnn_on_tape(&mut tape, &p, qv)?;
    Ok(single(&tape, h))
}

/// Normalized day-ahead forecast for one sample.
pub fn forward(x: &Tensor, q: &[f64], params: &ModelParameters) -> Result<Vec<f64>> {
    let sample = WindowSample {
        x: x.clone(),
        q: q.to_vec(),
        y: vec![0.0; params.dims.out_len],
        target_date: chrono::NaiveDate::MIN,
    };
    Ok(predict(params, std::slice::from_ref(&sample))?.remove(0))
}

/// Normalized forecasts for many samples, evaluated in chunks.
pub fn predict(params: &ModelParameters, samples: &[WindowSample]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_CHUNK) {
        let refs: Vec<&WindowSample> = chunk.iter().collect();
        let batch = Batch::new(&refs, &params.dims)?;
        let mut tape = Tape::new();
        let p = bind(&mut tape, params, frozen)?;
        let y = forward_on_tape(&mut tape, &p, &params.dims, &batch)?;
        let yv = tape.value(y);
        out.extend((0..yv.rows()).map(|r| yv.row(r).to_vec()));
    }
    Ok(out)
}

/// Concatenated hidden vectors for many samples, one row each. Useful when
/// only the output block changes.
pub fn hidden_features(params: &ModelParameters, samples: &[WindowSample]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_CHUNK) {
        let refs: Vec<&WindowSample> = chunk.iter().collect();
        let batch = Batch::new(&refs, &params.dims)?;
        let mut tape = Tape::new();
        let p = bind(&mut tape, params, frozen)?;
        let h = hidden_on_tape(&mut tape, &p, &params.dims, &batch)?;
        let hv = tape.value(h);
        out.extend((0..hv.rows()).map(|r| hv.row(r).to_vec()));
    }
    Ok(out)
}

/// Output block on precomputed hidden vectors.
pub fn head_forward(params: &ModelParameters, hidden: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if hidden.is_empty() {
        return Ok(Vec::new());
    }
    let width = params.dims.concat_dim();
    let mut tape = Tape::new();
    let p = bind(&mut tape, params, frozen)?;
    let h = tape.constant(Tensor::matrix(
        hidden.len(),
        width,
        hidden.iter().flat_map(|r| r.iter().copied()).collect(),
    )?)?;
    let y = head_on_tape(&mut tape, &p, h)?;
    let yv = tape.value(y);
    Ok((0..yv.rows()).map(|r| yv.row(r).to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelDims {
        ModelDims {
            seq_len: 4,
            in_dim: 7,
            d: 3,
            n_h: 5,
            q_dim: 6,
            out_len: 4,
        }
    }

    #[test]
    fn biases_start_at_zero_and_weights_within_glorot_bound() {
        let p = init_params(ModelDims::default_for(20), 7).unwrap();
        for (name, t) in p.iter() {
            match t.shape() {
                Shape::Vector(_) => assert!(t.data().iter().all(|&v| v == 0.0), "{name}"),
                Shape::Matrix(r, c) => {
                    let b = glorot_bound(r, c);
                    assert!(t.data().iter().all(|v| v.abs() <= b), "{name}");
                }
            }
        }
    }

    #[test]
    fn init_is_seeded() {
        let a = init_params(tiny(), 1).unwrap();
        assert_eq!(a, init_params(tiny(), 1).unwrap());
        assert_ne!(a, init_params(tiny(), 2).unwrap());
    }

    #[test]
    fn shapes_match_the_layout() {
        let dims = ModelDims::default_for(20);
        let p = ModelParameters::zeros(dims).unwrap();
        assert_eq!(p.get(ParamName::We).shape(), Shape::Matrix(10, 34));
        assert_eq!(p.get(ParamName::Wf1).shape(), Shape::Matrix(128, 32));
        assert_eq!(p.get(ParamName::Wo1).shape(), Shape::Matrix(128, 256));
        assert_eq!(p.get(ParamName::Wo2).shape(), Shape::Matrix(24, 128));
        assert_eq!(p.names().len(), 24);
        let no_fcnn = ModelDims {
            q_dim: 0,
            in_dim: 1,
            ..dims
        };
        let p1 = ModelParameters::zeros(no_fcnn).unwrap();
        assert_eq!(p1.names().len(), 18);
        assert_eq!(p1.get(ParamName::Wo1).shape(), Shape::Matrix(128, 128));
    }

    #[test]
    fn partition_covers_every_parameter_once() {
        let p = ModelParameters::zeros(ModelDims::default_for(20)).unwrap();
        let groups = [ParamGroup::Embedding, ParamGroup::Rest, ParamGroup::Output];
        let total: usize = groups.iter().map(|g| p.group_bytes(*g).len()).sum();
        assert_eq!(total, p.num_values() * 8);
    }

    #[test]
    fn invalid_dims_are_rejected() {
        assert!(ModelParameters::zeros(ModelDims {
            d: 34,
            ..ModelDims::default_for(20)
        })
        .is_err());
        assert!(ModelParameters::zeros(ModelDims { n_h: 0, ..tiny() }).is_err());
    }

    #[test]
    fn zero_params_forecast_zero_and_bias_only_head_is_constant() {
        let dims = tiny();
        let mut p = ModelParameters::zeros(dims).unwrap();
        let x = Tensor::filled(Shape::Matrix(4, 7), 0.3);
        let q = vec![0.5; 6];
        assert_eq!(forward(&x, &q, &p).unwrap(), vec![0.0; 4]);
        assert_eq!(lstm_block(&x, &p).unwrap(), vec![0.0; 5]);
        assert_eq!(fcnn_block(&q, &p).unwrap(), vec![0.0; 5]);
        let v = vec![1.0, -2.0, 0.5, 3.0];
        p.set(ParamName::Bo2, Tensor::vector(v.clone())).unwrap();
        assert_eq!(forward(&x, &q, &p).unwrap(), v);
    }

    #[test]
    fn zero_cell_fixed_point() {
        let p = ModelParameters::zeros(tiny()).unwrap();
        let next = lstm_cell(&[0.0; 3], &LstmCellState::zeros(5), &p).unwrap();
        assert_eq!(next, LstmCellState::zeros(5));
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut p = init_params(tiny(), 3).unwrap();
        p.set(ParamName::Bf, Tensor::vector(vec![50.0; 5])).unwrap();
        let prev = LstmCellState {
            h: vec![0.1, -0.2, 0.3, 0.0, 0.05],
            c: vec![1.0, -0.5, 0.25, 2.0, -1.0],
        };
        let s = [0.2, -0.1, 0.4];
        let next = lstm_cell(&s, &prev, &p).unwrap();
        // with f = 1, c - c_prev = i ⊙ g, which lies in (-1, 1)
        for k in 0..5 {
            let delta = next.c[k] - prev.c[k];
            assert!(delta.abs() < 1.0);
        }
    }

    #[test]
    fn shape_errors_propagate() {
        let p = ModelParameters::zeros(tiny()).unwrap();
        assert!(embed(&[0.0; 6], &p).is_err());
        assert!(lstm_block(&Tensor::zeros(Shape::Matrix(3, 7)), &p).is_err());
        assert!(fcnn_block(&[0.0; 5], &p).is_err());
    }

    // Plain-arithmetic oracles, independent of the tape.

    fn mv(w: &Tensor, x: &[f64]) -> Vec<f64> {
        (0..w.rows())
            .map(|r| w.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }

    fn sig(v: Vec<f64>) -> Vec<f64> {
        v.into_iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect()
    }

    fn th(v: Vec<f64>) -> Vec<f64> {
        v.into_iter().map(f64::tanh).collect()
    }

    fn relu(v: Vec<f64>) -> Vec<f64> {
        v.into_iter().map(|z| z.max(0.0)).collect()
    }

    fn oracle_cell(p: &ModelParameters, s: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        use ParamName::*;
        let pre = |wh, ws, b| add(&add(&mv(p.get(wh), h), &mv(p.get(ws), s)), p.get(b).data());
        let g = th(pre(Wgh, Wgs, Bg));
        let i = sig(pre(Wih, Wis, Bi));
        let f = sig(pre(Wfh, Wfs, Bf));
        let o = sig(pre(Woh, Wos, Bo));
        let c2: Vec<f64> = (0..h.len()).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
        let h2 = (0..h.len()).map(|k| o[k] * c2[k].tanh()).collect();
        (h2, c2)
    }

    fn oracle_embed(p: &ModelParameters, x: &[f64]) -> Vec<f64> {
        add(&mv(p.get(ParamName::We), x), p.get(ParamName::Be).data())
    }

    fn oracle_lstm(p: &ModelParameters, x: &Tensor) -> Vec<f64> {
        let n_h = p.dims().n_h;
        let (mut h, mut c) = (vec![0.0; n_h], vec![0.0; n_h]);
        for t in 0..x.rows() {
            (h, c) = oracle_cell(p, &oracle_embed(p, x.row(t)), &h, &c);
        }
        h
    }

    fn oracle_fcnn(p: &ModelParameters, q: &[f64]) -> Vec<f64> {
        use ParamName::*;
        let z1 = relu(add(&mv(p.get(Wf1), q), p.get(Bf1).data()));
        let z2 = relu(add(&mv(p.get(Wf2), &z1), p.get(Bf2).data()));
        add(&mv(p.get(Wf3), &z2), p.get(Bf3).data())
    }

    fn oracle_forward(p: &ModelParameters, x: &Tensor, q: &[f64]) -> Vec<f64> {
        use ParamName::*;
        let mut hidden = oracle_lstm(p, x);
        if p.dims().has_fcnn() {
            hidden.extend(oracle_fcnn(p, q));
        }
        let z = relu(add(&mv(p.get(Wo1), &hidden), p.get(Bo1).data()));
        add(&mv(p.get(Wo2), &z), p.get(Bo2).data())
    }

    fn randomized(dims: ModelDims, seed: u64) -> ModelParameters {
        // nonzero biases so that every term is exercised
        let mut p = init_params(dims, seed).unwrap();
        let mut k = 0.0;
        for (name, t) in p.names().to_vec().into_iter().zip(p.tensors_mut()) {
            if let Shape::Vector(_) = t.shape() {
                for v in t.data_mut() {
                    k += 1.0;
                    *v = 0.3 * (k * 0.7 + name as usize as f64).sin();
                }
            }
        }
        p
    }

    fn input(rows: usize, cols: usize, phase: f64) -> Tensor {
        let data = (0..rows * cols).map(|i| (i as f64 * 0.37 + phase).sin()).collect();
        Tensor::matrix(rows, cols, data).unwrap()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn embed_matches_matrix_vector_product() {
        let p = randomized(tiny(), 11);
        let x = [0.5, -1.0, 0.25, 0.0, 1.0, 0.0, 0.0];
        assert_close(&embed(&x, &p).unwrap(), &oracle_embed(&p, &x), 1e-14);
    }

    #[test]
    fn cell_matches_scalar_oracle() {
        let p = randomized(tiny(), 12);
        let prev = LstmCellState {
            h: vec![0.1, -0.4, 0.2, 0.0, 0.6],
            c: vec![-1.0, 0.5, 0.3, 2.0, -0.2],
        };
        let s = [0.3, -0.7, 1.1];
        let got = lstm_cell(&s, &prev, &p).unwrap();
        let (h, c) = oracle_cell(&p, &s, &prev.h, &prev.c);
        assert_close(&got.h, &h, 1e-14);
        assert_close(&got.c, &c, 1e-14);
        // gate ranges imply |h| < 1
        assert!(got.h.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn three_step_unroll_matches_oracle() {
        let dims = ModelDims { seq_len: 3, ..tiny() };
        let p = randomized(dims, 13);
        let x = input(3, 7, 0.2);
        assert_close(&lstm_block(&x, &p).unwrap(), &oracle_lstm(&p, &x), 1e-13);
    }

    #[test]
    fn fcnn_matches_oracle() {
        let p = randomized(tiny(), 14);
        let q = [0.9, -0.3, 0.0, 0.4, 1.0, -1.2];
        assert_close(&fcnn_block(&q, &p).unwrap(), &oracle_fcnn(&p, &q), 1e-14);
    }

    #[test]
    fn end_to_end_forward_matches_oracle() {
        let p = randomized(tiny(), 15);
        let x = input(4, 7, 1.3);
        let q = [0.2, 0.8, -0.5, 0.1, 0.0, 0.7];
        assert_close(&forward(&x, &q, &p).unwrap(), &oracle_forward(&p, &x, &q), 1e-10);

        let no_fcnn = ModelDims {
            in_dim: 1,
            q_dim: 0,
            ..tiny()
        };
        let p1 = randomized(no_fcnn, 16);
        let x1 = input(4, 1, 0.4);
        assert_close(&forward(&x1, &[], &p1).unwrap(), &oracle_forward(&p1, &x1, &[]), 1e-10);
    }

    #[test]
    fn batched_prediction_is_permutation_invariant() {
        let p = randomized(tiny(), 17);
        let samples: Vec<WindowSample> = (0..5)
            .map(|i| WindowSample {
                x: input(4, 7, i as f64),
                q: (0..6).map(|k| ((i * 6 + k) as f64).cos()).collect(),
                y: vec![0.0; 4],
                target_date: chrono::NaiveDate::MIN,
            })
            .collect();
        let fwd = predict(&p, &samples).unwrap();
        let mut rev = samples.clone();
        rev.reverse();
        let back = predict(&p, &rev).unwrap();
        for (i, row) in fwd.iter().enumerate() {
            assert_close(row, &back[4 - i], 1e-13);
            assert_close(row, &oracle_forward(&p, &samples[i].x, &samples[i].q), 1e-10);
        }
    }
}
