//! Reverse-mode differentiation over batched dense tensors.
//!
//! A [`Tape`] records one forward pass. Every primitive evaluates eagerly,
//! checks its output for NaN/Inf and appends a node; [`Tape::backward`]
//! walks the nodes in reverse insertion order, which is a valid reverse
//! topological order because inputs always precede their consumers.

use std::collections::BTreeMap;

use super::tensor::{gemm, matmul_xwt, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Caller-chosen identity of a trainable parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Affine { terms: Vec<(Var, Var)>, bias: Option<Var> },
    Add(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Hadamard(Var, Var),
    Concat(Var, Var),
    RowBlock { src: Var, start: usize },
    MeanAbsError { pred: Var, target: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients keyed by parameter. Every parameter registered on the tape has
/// an entry; parameters off the path to the loss get exact zeros.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    map: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.map.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.map.iter().map(|(k, v)| (*k, v))
    }

    pub fn into_map(self) -> BTreeMap<ParamId, Tensor> {
        self.map
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: &'static str, value: Tensor, node_op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        self.nodes.push(Node {
            value,
            op: node_op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant input (no gradient flows into it).
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push("constant", value, Op::Constant, false)
    }

    /// Records a trainable parameter.
    pub fn param(&mut self, id: ParamId, value: Tensor) -> Result<Var> {
        self.push("param", value, Op::Param(id), true)
    }

    /// `Σ_k x_k · w_kᵀ + b`, with `x_k` of shape `B×in_k`, `w_k` of shape
    /// `out×in_k` and an optional bias vector of length `out` broadcast over
    /// the rows.
    pub fn affine(&mut self, terms: &[(Var, Var)], bias: Option<Var>) -> Result<Var> {
        let Some(&(x0, w0)) = terms.first() else {
            return Err(Error::shape("affine", "no terms"));
        };
        let rows = self.shape(x0).rows();
        let out = self.shape(w0).rows();
        for &(x, w) in terms {
            let (xs, ws) = (self.shape(x), self.shape(w));
            if xs.rows() != rows || ws.rows() != out || xs.cols() != ws.cols() {
                return Err(Error::shape(
                    "affine",
                    format!("input {xs} with weight {ws} (expected {rows} rows in, {out} out)"),
                ));
            }
        }
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs.rows() != 1 || bs.cols() != out {
                return Err(Error::shape("affine", format!("bias {bs} for {out} outputs")));
            }
        }
        let mut data = vec![0.0; rows * out];
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for row in data.chunks_mut(out) {
                row.copy_from_slice(bv);
            }
        }
        for &(x, w) in terms {
            let xv = self.value(x);
            let k = xv.cols();
            matmul_xwt(xv.data(), rows, k, self.value(w).data(), out, 1.0, &mut data);
        }
        let requires =
            terms.iter().any(|&(x, w)| self.needs(x) || self.needs(w)) || bias.is_some_and(|b| self.needs(b));
        let value = Tensor::from_vec(Shape::Matrix(rows, out), data)?;
        self.push(
            "affine",
            value,
            Op::Affine {
                terms: terms.to_vec(),
                bias,
            },
            requires,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut value = self.value(a).clone();
        value.axpy(1.0, self.value(b))?;
        let requires = self.needs(a) || self.needs(b);
        self.push("add", value, Op::Add(a, b), requires)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        let requires = self.needs(a);
        self.push("sigmoid", value, Op::Sigmoid(a), requires)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::tanh);
        let requires = self.needs(a);
        self.push("tanh", value, Op::Tanh(a), requires)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|v| v.max(0.0));
        let requires = self.needs(a);
        self.push("relu", value, Op::Relu(a), requires)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::from_vec(self.shape(a), data)?;
        let requires = self.needs(a) || self.needs(b);
        self.push("hadamard", value, Op::Hadamard(a, b), requires)
    }

    /// Column-wise concatenation of two tensors with equal row counts.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.rows() != sb.rows() {
            return Err(Error::shape("concat", format!("{sa} with {sb}")));
        }
        let (ca, cb) = (sa.cols(), sb.cols());
        let mut data = Vec::with_capacity(sa.rows() * (ca + cb));
        for r in 0..sa.rows() {
            data.extend_from_slice(self.value(a).row(r));
            data.extend_from_slice(self.value(b).row(r));
        }
        let shape = match (sa, sb) {
            (Shape::Vector(_), Shape::Vector(_)) => Shape::Vector(ca + cb),
            _ => Shape::Matrix(sa.rows(), ca + cb),
        };
        let value = Tensor::from_vec(shape, data)?;
        let requires = self.needs(a) || self.needs(b);
        self.push("concat", value, Op::Concat(a, b), requires)
    }

    /// Rows `start..start + len` of a matrix.
    pub fn row_block(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(src);
        if start + len > s.rows() {
            return Err(Error::shape(
                "row_block",
                format!("rows {start}..{} of {s}", start + len),
            ));
        }
        let c = s.cols();
        let data = self.value(src).data()[start * c..(start + len) * c].to_vec();
        let value = Tensor::from_vec(Shape::Matrix(len, c), data)?;
        let requires = self.needs(src);
        self.push("row_block", value, Op::RowBlock { src, start }, requires)
    }

    /// Per-row 1-norm of `pred - target`, averaged over rows. Returns a scalar.
    pub fn mean_abs_error(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mean_abs_error", pred, target)?;
        let rows = self.shape(pred).rows();
        if rows == 0 {
            return Err(Error::shape("mean_abs_error", "empty batch"));
        }
        let total: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(p, t)| (p - t).abs())
            .sum();
        let requires = self.needs(pred) || self.needs(target);
        self.push(
            "mean_abs_error",
            Tensor::scalar(total / rows as f64),
            Op::MeanAbsError { pred, target },
            requires,
        )
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa} vs {sb}")));
        }
        Ok(())
    }

    /// Gradients of a scalar `loss` with respect to every parameter on the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.shape(loss), 1.0));
        let mut out = Gradients::default();
        for node in &self.nodes {
            if let Op::Param(id) = node.op {
                out.map.insert(id, Tensor::zeros(node.value.shape()));
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    if let Some(g) = out.map.get_mut(id) {
                        g.axpy(1.0, &dy)?;
                    }
                }
                Op::Affine { terms, bias } => {
                    let rows = dy.rows();
                    let n = dy.cols();
                    for &(x, w) in terms {
                        let xv = self.value(x);
                        let wv = self.value(w);
                        let k = xv.cols();
                        if self.needs(x) {
                            let g = slot(&mut grads, x, xv.shape());
                            gemm(
                                rows,
                                n,
                                k,
                                dy.data(),
                                n as isize,
                                1,
                                wv.data(),
                                k as isize,
                                1,
                                1.0,
                                g.data_mut(),
                            );
                        }
                        if self.needs(w) {
                            let g = slot(&mut grads, w, wv.shape());
                            gemm(
                                n,
                                rows,
                                k,
                                dy.data(),
                                1,
                                n as isize,
                                xv.data(),
                                k as isize,
                                1,
                                1.0,
                                g.data_mut(),
                            );
                        }
                    }
                    if let Some(b) = *bias {
                        if self.needs(b) {
                            let g = slot(&mut grads, b, self.shape(b));
                            let gd = g.data_mut();
                            for r in 0..rows {
                                for (acc, v) in gd.iter_mut().zip(dy.row(r)) {
                                    *acc += v;
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if self.needs(v) {
                            slot(&mut grads, v, dy.shape()).axpy(1.0, &dy)?;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    self.elementwise_back(&mut grads, *a, &dy, |i, d| {
                        let s = y.data()[i];
                        d * s * (1.0 - s)
                    });
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    self.elementwise_back(&mut grads, *a, &dy, |i, d| {
                        let t = y.data()[i];
                        d * (1.0 - t * t)
                    });
                }
                Op::Relu(a) => {
                    let y = &node.value;
                    self.elementwise_back(&mut grads, *a, &dy, |i, d| if y.data()[i] > 0.0 { d } else { 0.0 });
                }
                Op::Hadamard(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    self.elementwise_back(&mut grads, *a, &dy, |i, d| d * bv.data()[i]);
                    self.elementwise_back(&mut grads, *b, &dy, |i, d| d * av.data()[i]);
                }
                Op::Concat(a, b) => {
                    let ca = self.shape(*a).cols();
                    let cb = self.shape(*b).cols();
                    if self.needs(*a) {
                        let g = slot(&mut grads, *a, self.shape(*a));
                        for r in 0..dy.rows() {
                            for (acc, v) in g.data_mut()[r * ca..(r + 1) * ca].iter_mut().zip(&dy.row(r)[..ca]) {
                                *acc += v;
                            }
                        }
                    }
                    if self.needs(*b) {
                        let g = slot(&mut grads, *b, self.shape(*b));
                        for r in 0..dy.rows() {
                            for (acc, v) in g.data_mut()[r * cb..(r + 1) * cb].iter_mut().zip(&dy.row(r)[ca..]) {
                                *acc += v;
                            }
                        }
                    }
                }
                Op::RowBlock { src, start } => {
                    if self.needs(*src) {
                        let c = dy.cols();
                        let g = slot(&mut grads, *src, self.shape(*src));
                        let dst = &mut g.data_mut()[start * c..start * c + dy.len()];
                        for (acc, v) in dst.iter_mut().zip(dy.data()) {
                            *acc += v;
                        }
                    }
                }
                Op::MeanAbsError { pred, target } => {
                    let scale = dy.data()[0] / self.shape(*pred).rows() as f64;
                    let (pv, tv) = (self.value(*pred), self.value(*target));
                    let sign = |i: usize| {
                        let diff = pv.data()[i] - tv.data()[i];
                        // subgradient of |x| at 0 is taken as 0
                        if diff > 0.0 {
                            1.0
                        } else if diff < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    };
                    if self.needs(*pred) {
                        let g = slot(&mut grads, *pred, pv.shape());
                        for (i, acc) in g.data_mut().iter_mut().enumerate() {
                            *acc += scale * sign(i);
                        }
                    }
                    if self.needs(*target) {
                        let g = slot(&mut grads, *target, tv.shape());
                        for (i, acc) in g.data_mut().iter_mut().enumerate() {
                            *acc -= scale * sign(i);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn elementwise_back(&self, grads: &mut [Option<Tensor>], input: Var, dy: &Tensor, f: impl Fn(usize, f64) -> f64) {
        if !self.needs(input) {
            return;
        }
        let g = slot(grads, input, self.shape(input));
        for (i, (acc, d)) in g.data_mut().iter_mut().zip(dy.data()).enumerate() {
            *acc += f(i, *d);
        }
    }
}

fn slot(grads: &mut [Option<Tensor>], v: Var, shape: Shape) -> &mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
