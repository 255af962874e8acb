//! Define-then-run computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in construction order, which is also a valid topological
//! order, so `forward` is a single sweep and `backward` a single reverse sweep.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Sigmoid pre-activations are clamped to this magnitude so outputs stay strictly in (0, 1).
pub const SIGMOID_CLAMP: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Input(String),
    Param(ParamId),
    Const(Tensor),
    MatMul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulCol(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    ConcatCols(NodeId, NodeId),
    AppendColumn(NodeId, f64),
    Column(NodeId, usize),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softplus(NodeId),
    Softmax(NodeId),
    Mean(NodeId),
    Sum(NodeId),
    SoftmaxCrossEntropy { logits: NodeId, labels: NodeId },
    GaussianNll { mean: NodeId, sigma: NodeId, target: NodeId },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Const(_) => "const",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulCol(..) => "mul_col",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::ConcatCols(..) => "concat_cols",
            Op::AppendColumn(..) => "append_column",
            Op::Column(..) => "column",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Softplus(_) => "softplus",
            Op::Softmax(_) => "softmax",
            Op::Mean(_) => "mean",
            Op::Sum(_) => "sum",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::GaussianNll { .. } => "gaussian_nll",
        }
    }

    /// Inputs through which gradient flows. Labels and targets are excluded.
    fn differentiable_inputs(&self) -> Vec<NodeId> {
        match *self {
            Op::Input(_) | Op::Param(_) | Op::Const(_) => vec![],
            Op::MatMul(a, b)
            | Op::AddRow(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MulCol(a, b)
            | Op::ConcatCols(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::AppendColumn(a, _)
            | Op::Column(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Softplus(a)
            | Op::Softmax(a)
            | Op::Mean(a)
            | Op::Sum(a) => vec![a],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![logits],
            Op::GaussianNll { mean, sigma, .. } => vec![mean, sigma],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    params: BTreeMap<ParamId, Tensor>,
    inputs: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn input(&self, name: &str) -> Option<&Tensor> {
        self.inputs.get(name)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    /// Adds `other` into `self` elementwise.
    pub fn accumulate(&mut self, other: &Gradients) {
        fn merge<K: Ord + Clone>(dst: &mut BTreeMap<K, Tensor>, src: &BTreeMap<K, Tensor>) {
            for (k, t) in src {
                match dst.get_mut(k) {
                    Some(d) => d.data_mut().iter_mut().zip(t.data()).for_each(|(a, b)| *a += b),
                    None => {
                        dst.insert(k.clone(), t.clone());
                    }
                }
            }
        }
        merge(&mut self.params, &other.params);
        merge(&mut self.inputs, &other.inputs);
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.params.values_mut().chain(self.inputs.values_mut()) {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    values: Vec<Option<Tensor>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, leaf_grad: bool) -> NodeId {
        let requires_grad = leaf_grad
            || op
                .differentiable_inputs()
                .iter()
                .any(|id| self.nodes[id.0].requires_grad);
        self.nodes.push(Node { op, requires_grad });
        self.values.push(None);
        NodeId(self.nodes.len() - 1)
    }

    /// Named input bound at `forward` time; no gradient.
    pub fn input(&mut self, name: &str) -> NodeId {
        self.push(Op::Input(name.to_string()), false)
    }

    /// Named input whose gradient is reported by `backward`.
    pub fn input_with_grad(&mut self, name: &str) -> NodeId {
        self.push(Op::Input(name.to_string()), true)
    }

    /// Trainable parameter.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.push(Op::Param(id), true)
    }

    /// Parameter read as a constant: no gradient is produced for it.
    pub fn frozen_param(&mut self, id: ParamId) -> NodeId {
        self.push(Op::Param(id), false)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Const(value), false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b), false)
    }

    /// `a + bias` with `bias` (`[1, n]` or `[n]`) broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        self.push(Op::AddRow(a, bias), false)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b), false)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b), false)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b), false)
    }

    /// `a[i, j] * col[i, 0]`.
    pub fn mul_col(&mut self, a: NodeId, col: NodeId) -> NodeId {
        self.push(Op::MulCol(a, col), false)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale(a, factor), false)
    }

    pub fn add_scalar(&mut self, a: NodeId, value: f64) -> NodeId {
        self.push(Op::AddScalar(a, value), false)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::ConcatCols(a, b), false)
    }

    /// Appends one constant-valued column.
    pub fn append_column(&mut self, a: NodeId, value: f64) -> NodeId {
        self.push(Op::AppendColumn(a, value), false)
    }

    /// Extracts column `j` as `[rows, 1]`.
    pub fn column(&mut self, a: NodeId, j: usize) -> NodeId {
        self.push(Op::Column(a, j), false)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a), false)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid(a), false)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a), false)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Softplus(a), false)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Softmax(a), false)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a), false)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a), false)
    }

    /// Per-row cross-entropy `[rows, 1]`; `labels` holds class indices as floats.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: NodeId) -> NodeId {
        self.push(Op::SoftmaxCrossEntropy { logits, labels }, false)
    }

    /// Per-row `-log N(target; mean, sigma^2)` as `[rows, 1]`.
    pub fn gaussian_nll(&mut self, mean: NodeId, sigma: NodeId, target: NodeId) -> NodeId {
        self.push(Op::GaussianNll { mean, sigma, target }, false)
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Value computed by the last `forward`.
    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        self.values[id.0]
            .as_ref()
            .ok_or_else(|| Error::State(format!("node {} has not been evaluated", id.0)))
    }

    /// Evaluates every node in order, saving all intermediates.
    pub fn forward(&mut self, params: &ParamStore, inputs: &[(&str, &Tensor)]) -> Result<()> {
        self.values.iter_mut().for_each(|v| *v = None);
        for i in 0..self.nodes.len() {
            let value = self.eval_node(i, params, inputs)?;
            if !value.is_finite() {
                return Err(Error::numeric(format!(
                    "{} (node {i}, shape {:?})",
                    self.nodes[i].op.name(),
                    value.shape()
                )));
            }
            self.values[i] = Some(value);
        }
        Ok(())
    }

    fn val(&self, id: NodeId) -> &Tensor {
        self.values[id.0].as_ref().expect("operands evaluated before use")
    }

    fn eval_node(&self, i: usize, params: &ParamStore, inputs: &[(&str, &Tensor)]) -> Result<Tensor> {
        let op = &self.nodes[i].op;
        let name = op.name();
        let out = match op {
            Op::Input(n) => inputs
                .iter()
                .find(|(k, _)| k == n)
                .map(|(_, t)| (*t).clone())
                .ok_or_else(|| Error::State(format!("input {n:?} is not bound")))?,
            Op::Param(id) => {
                if id.0 >= params.len() {
                    return Err(Error::State(format!("parameter {} missing from store", id.0)));
                }
                params.get(*id).clone()
            }
            Op::Const(t) => t.clone(),
            Op::MatMul(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                let (m, k) = dims(name, a)?;
                let (k2, n) = dims(name, b)?;
                if k != k2 {
                    return Err(Error::shape(name, format!("{:?} x {:?}", a.shape(), b.shape())));
                }
                Tensor::matrix(m, n, matmul(a.data(), b.data(), m, k, n))?
            }
            Op::AddRow(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                let (m, n) = dims(name, a)?;
                if b.numel() != n {
                    return Err(Error::shape(name, format!("{:?} + row {:?}", a.shape(), b.shape())));
                }
                let mut out = a.clone();
                for r in 0..m {
                    for (o, bv) in out.data_mut()[r * n..(r + 1) * n].iter_mut().zip(b.data()) {
                        *o += bv;
                    }
                }
                out
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (x, y) = (self.val(*a), self.val(*b));
                if x.shape() != y.shape() {
                    return Err(Error::shape(name, format!("{:?} vs {:?}", x.shape(), y.shape())));
                }
                let f: fn(f64, f64) -> f64 = match op {
                    Op::Add(..) => |p, q| p + q,
                    Op::Sub(..) => |p, q| p - q,
                    _ => |p, q| p * q,
                };
                let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
                Tensor::new(x.shape().to_vec(), data)?
            }
            Op::MulCol(a, c) => {
                let (a, c) = (self.val(*a), self.val(*c));
                let (m, n) = dims(name, a)?;
                if c.numel() != m {
                    return Err(Error::shape(name, format!("{:?} * col {:?}", a.shape(), c.shape())));
                }
                let mut out = a.clone();
                for r in 0..m {
                    let s = c.data()[r];
                    out.data_mut()[r * n..(r + 1) * n].iter_mut().for_each(|v| *v *= s);
                }
                out
            }
            Op::Scale(a, s) => self.val(*a).map(|v| v * s),
            Op::AddScalar(a, s) => self.val(*a).map(|v| v + s),
            Op::ConcatCols(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                let (m, p) = dims(name, a)?;
                let (m2, q) = dims(name, b)?;
                if m != m2 {
                    return Err(Error::shape(name, format!("{:?} | {:?}", a.shape(), b.shape())));
                }
                let mut data = Vec::with_capacity(m * (p + q));
                for r in 0..m {
                    data.extend_from_slice(a.row(r));
                    data.extend_from_slice(b.row(r));
                }
                Tensor::matrix(m, p + q, data)?
            }
            Op::AppendColumn(a, v) => {
                let a = self.val(*a);
                let (m, p) = dims(name, a)?;
                let mut data = Vec::with_capacity(m * (p + 1));
                for r in 0..m {
                    data.extend_from_slice(a.row(r));
                    data.push(*v);
                }
                Tensor::matrix(m, p + 1, data)?
            }
            Op::Column(a, j) => {
                let a = self.val(*a);
                let (m, n) = dims(name, a)?;
                if *j >= n {
                    return Err(Error::shape(name, format!("column {j} of {:?}", a.shape())));
                }
                Tensor::column((0..m).map(|r| a.get(r, *j)).collect())
            }
            Op::Relu(a) => self.val(*a).map(|v| v.max(0.0)),
            Op::Sigmoid(a) => self.val(*a).map(sigmoid),
            Op::Tanh(a) => self.val(*a).map(f64::tanh),
            Op::Softplus(a) => self.val(*a).map(softplus),
            Op::Softmax(a) => {
                let a = self.val(*a);
                let (m, n) = dims(name, a)?;
                let mut data = Vec::with_capacity(m * n);
                for r in 0..m {
                    data.extend(softmax_row(a.row(r)));
                }
                Tensor::matrix(m, n, data)?
            }
            Op::Mean(a) => {
                let a = self.val(*a);
                if a.numel() == 0 {
                    return Err(Error::shape(name, "mean of empty tensor"));
                }
                Tensor::scalar(a.data().iter().sum::<f64>() / a.numel() as f64)
            }
            Op::Sum(a) => Tensor::scalar(self.val(*a).data().iter().sum()),
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let (z, y) = (self.val(*logits), self.val(*labels));
                let (m, k) = dims(name, z)?;
                let labels = class_labels(name, y, m, k)?;
                let losses = (0..m)
                    .map(|r| {
                        let row = z.row(r);
                        log_sum_exp(row) - row[labels[r]]
                    })
                    .collect();
                Tensor::column(losses)
            }
            Op::GaussianNll { mean, sigma, target } => {
                let (mu, s, y) = (self.val(*mean), self.val(*sigma), self.val(*target));
                let m = mu.numel();
                if s.numel() != m || y.numel() != m {
                    return Err(Error::shape(
                        name,
                        format!("mean {:?}, sigma {:?}, target {:?}", mu.shape(), s.shape(), y.shape()),
                    ));
                }
                let half_log_2pi = 0.5 * (2.0 * PI).ln();
                let losses = (0..m)
                    .map(|r| {
                        let (mu, s, y) = (mu.data()[r], s.data()[r], y.data()[r]);
                        half_log_2pi + s.ln() + (y - mu).powi(2) / (2.0 * s * s)
                    })
                    .collect();
                Tensor::column(losses)
            }
        };
        Ok(out)
    }

    /// Reverse sweep from the scalar `loss`, accumulating over fan-out.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_value = self.value(loss).map_err(|_| {
            Error::State("backward called before forward".to_string())
        })?;
        if !loss_value.is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", loss_value.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let out_val = self.val(NodeId(i));
            match &node.op {
                Op::Input(name) => {
                    out.inputs.insert(name.clone(), Tensor::new(out_val.shape().to_vec(), g)?);
                }
                Op::Param(id) => {
                    let t = Tensor::new(out_val.shape().to_vec(), g)?;
                    match out.params.get_mut(id) {
                        Some(existing) => existing
                            .data_mut()
                            .iter_mut()
                            .zip(t.data())
                            .for_each(|(a, b)| *a += b),
                        None => {
                            out.params.insert(*id, t);
                        }
                    }
                }
                Op::Const(_) => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.val(*a), self.val(*b));
                    let (m, k) = (av.rows(), av.cols());
                    let n = bv.cols();
                    self.accumulate(&mut grads, *a, |da| {
                        // dA = dC · Bᵀ
                        for r in 0..m {
                            for c in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += g[r * n + j] * bv.data()[c * n + j];
                                }
                                da[r * k + c] += s;
                            }
                        }
                    });
                    self.accumulate(&mut grads, *b, |db| {
                        // dB = Aᵀ · dC
                        for r in 0..m {
                            for c in 0..k {
                                let a_rc = av.data()[r * k + c];
                                if a_rc == 0.0 {
                                    continue;
                                }
                                for j in 0..n {
                                    db[c * n + j] += a_rc * g[r * n + j];
                                }
                            }
                        }
                    });
                }
                Op::AddRow(a, b) => {
                    let n = out_val.cols();
                    self.accumulate(&mut grads, *a, |da| add_into(da, &g));
                    self.accumulate(&mut grads, *b, |db| {
                        for (idx, v) in g.iter().enumerate() {
                            db[idx % n] += v;
                        }
                    });
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, |da| add_into(da, &g));
                    self.accumulate(&mut grads, *b, |db| add_into(db, &g));
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, *a, |da| add_into(da, &g));
                    self.accumulate(&mut grads, *b, |db| {
                        db.iter_mut().zip(&g).for_each(|(d, v)| *d -= v)
                    });
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.val(*a), self.val(*b));
                    self.accumulate(&mut grads, *a, |da| {
                        for (idx, d) in da.iter_mut().enumerate() {
                            *d += g[idx] * bv.data()[idx];
                        }
                    });
                    self.accumulate(&mut grads, *b, |db| {
                        for (idx, d) in db.iter_mut().enumerate() {
                            *d += g[idx] * av.data()[idx];
                        }
                    });
                }
                Op::MulCol(a, c) => {
                    let (av, cv) = (self.val(*a), self.val(*c));
                    let n = av.cols();
                    self.accumulate(&mut grads, *a, |da| {
                        for (idx, d) in da.iter_mut().enumerate() {
                            *d += g[idx] * cv.data()[idx / n];
                        }
                    });
                    self.accumulate(&mut grads, *c, |dc| {
                        for (idx, v) in g.iter().enumerate() {
                            dc[idx / n] += v * av.data()[idx];
                        }
                    });
                }
                Op::Scale(a, s) => {
                    self.accumulate(&mut grads, *a, |da| {
                        da.iter_mut().zip(&g).for_each(|(d, v)| *d += v * s)
                    });
                }
                Op::AddScalar(a, _) => self.accumulate(&mut grads, *a, |da| add_into(da, &g)),
                Op::ConcatCols(a, b) => {
                    let p = self.val(*a).cols();
                    let q = self.val(*b).cols();
                    let w = p + q;
                    self.accumulate(&mut grads, *a, |da| {
                        for (idx, d) in da.iter_mut().enumerate() {
                            *d += g[(idx / p) * w + idx % p];
                        }
                    });
                    self.accumulate(&mut grads, *b, |db| {
                        for (idx, d) in db.iter_mut().enumerate() {
                            *d += g[(idx / q) * w + p + idx % q];
                        }
                    });
                }
                Op::AppendColumn(a, _) => {
                    let p = self.val(*a).cols();
                    self.accumulate(&mut grads, *a, |da| {
                        for (idx, d) in da.iter_mut().enumerate() {
                            *d += g[(idx / p) * (p + 1) + idx % p];
                        }
                    });
                }
                Op::Column(a, j) => {
                    let n = self.val(*a).cols();
                    self.accumulate(&mut grads, *a, |da| {
                        for (r, v) in g.iter().enumerate() {
                            da[r * n + j] += v;
                        }
                    });
                }
                Op::Relu(a) => {
                    let x = self.val(*a);
                    self.accumulate(&mut grads, *a, |da| {
                        for (idx, d) in da.iter_mut().enumerate() {
                            if x.data()[idx] > 0.0 {
                                *d += g[idx];
                            }
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let x = self.val(*a);
                    self.accumulate(&mut grads, *a, |da| {
                        for (idx, d) in da.iter_mut().enumerate() {
                            if x.data()[idx].abs() < SIGMOID_CLAMP {
                                let s = out_val.data()[idx];
                                *d += g[idx] * s * (1.0 - s);
                            }
                        }
                    });
                }
                Op::Tanh(a) => {
                    self.accumulate(&mut grads, *a, |da| {
                        for (idx, d) in da.iter_mut().enumerate() {
                            let y = out_val.data()[idx];
                            *d += g[idx] * (1.0 - y * y);
                        }
                    });
                }
                Op::Softplus(a) => {
                    let x = self.val(*a);
                    self.accumulate(&mut grads, *a, |da| {
                        for (idx, d) in da.iter_mut().enumerate() {
                            *d += g[idx] * logistic(x.data()[idx]);
                        }
                    });
                }
                Op::Softmax(a) => {
                    let n = out_val.cols();
                    self.accumulate(&mut grads, *a, |da| {
                        for r in 0..out_val.rows() {
                            let s = out_val.row(r);
                            let gr = &g[r * n..(r + 1) * n];
                            let dot: f64 = s.iter().zip(gr).map(|(p, q)| p * q).sum();
                            for j in 0..n {
                                da[r * n + j] += s[j] * (gr[j] - dot);
                            }
                        }
                    });
                }
                Op::Mean(a) => {
                    let scale = g[0] / self.val(*a).numel() as f64;
                    self.accumulate(&mut grads, *a, |da| da.iter_mut().for_each(|d| *d += scale));
                }
                Op::Sum(a) => {
                    self.accumulate(&mut grads, *a, |da| da.iter_mut().for_each(|d| *d += g[0]));
                }
                Op::SoftmaxCrossEntropy { logits, labels } => {
                    let z = self.val(*logits);
                    let (m, k) = (z.rows(), z.cols());
                    let labels = class_labels("softmax_cross_entropy", self.val(*labels), m, k)?;
                    self.accumulate(&mut grads, *logits, |dz| {
                        for r in 0..m {
                            let p = softmax_row(z.row(r));
                            for j in 0..k {
                                let onehot = if j == labels[r] { 1.0 } else { 0.0 };
                                dz[r * k + j] += g[r] * (p[j] - onehot);
                            }
                        }
                    });
                }
                Op::GaussianNll { mean, sigma, target } => {
                    let (mu, s, y) = (self.val(*mean), self.val(*sigma), self.val(*target));
                    self.accumulate(&mut grads, *mean, |dm| {
                        for (r, d) in dm.iter_mut().enumerate() {
                            let (mu, s, y) = (mu.data()[r], s.data()[r], y.data()[r]);
                            *d += g[r] * (mu - y) / (s * s);
                        }
                    });
                    self.accumulate(&mut grads, *sigma, |ds| {
                        for (r, d) in ds.iter_mut().enumerate() {
                            let (mu, s, y) = (mu.data()[r], s.data()[r], y.data()[r]);
                            *d += g[r] * (1.0 / s - (y - mu).powi(2) / (s * s * s));
                        }
                    });
                }
            }
        }

        for t in out.params.values().chain(out.inputs.values()) {
            if !t.is_finite() {
                return Err(Error::numeric("backward: non-finite gradient"));
            }
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], id: NodeId, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let n = self.val(id).numel();
        let buf = grads[id.0].get_or_insert_with(|| vec![0.0; n]);
        f(buf);
    }
}

fn dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    t.dims2()
        .ok_or_else(|| Error::shape(op, format!("expected a matrix, got shape {:?}", t.shape())))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn class_labels(op: &'static str, labels: &Tensor, rows: usize, classes: usize) -> Result<Vec<usize>> {
    if labels.numel() != rows {
        return Err(Error::shape(
            op,
            format!("{rows} rows but {} labels", labels.numel()),
        ));
    }
    labels
        .data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && (v as usize) < classes {
                Ok(v as usize)
            } else {
                Err(Error::shape(op, format!("label {v} is not a class index below {classes}")))
            }
        })
        .collect()
}

pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        let row = &mut out[r * n..(r + 1) * n];
        for c in 0..k {
            let a_rc = a[r * k + c];
            if a_rc == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[c * n..(c + 1) * n]) {
                *o += a_rc * bv;
            }
        }
    }
    out
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic function on the clamped pre-activation; always strictly inside (0, 1).
pub fn sigmoid(x: f64) -> f64 {
    logistic(x.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP))
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
