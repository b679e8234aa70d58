//! Reverse-mode compute graph over dense tensors.
//!
//! The graph is a tape: forward calls append nodes in execution order, and
//! `backward` replays the tape in reverse, accumulating adjoints. Node inputs
//! always refer to earlier nodes, so creation order is a topological order.
//!
//! Every forward op validates shapes up front and checks its output for
//! NaN/Inf, aborting with the producing op's name rather than letting a
//! corrupted value propagate. Leaf nodes optionally point back into a
//! [`ParamSet`]; after `backward`, `accumulate_grads` moves leaf adjoints
//! into the corresponding parameter gradient buffers (frozen parameters are
//! skipped).

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamSet, Tensor};

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<ParamId> },
    MatVec { w: NodeId, x: NodeId },
    Linear { w: NodeId, x: NodeId, b: NodeId },
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sum(NodeId),
    Scale { x: NodeId, factor: f64 },
    ScaleBy { x: NodeId, s: NodeId },
    OneMinus(NodeId),
    MeanStack(Vec<NodeId>),
    Normalize(NodeId),
    Cosine(NodeId, NodeId),
    Gather { x: NodeId, index: usize },
    Stack(Vec<NodeId>),
    SoftmaxXent { logits: NodeId, label: usize },
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Tape-style compute graph; see module docs.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

/// Numerically stabilized softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Stable cross-entropy pieces shared by forward and backward so both see
/// identical rounding.
fn softmax_xent_parts(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|&e| e / sum).collect();
    let loss = sum.ln() - (logits[label] - max);
    (loss, probs)
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].data
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id].data.len(), 1);
        self.nodes[id].data[0]
    }

    /// Adjoint of a node after `backward`; `None` before any backward pass.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id].grad.as_deref()
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Result<NodeId> {
        check_finite(op_name, &data)?;
        let id = self.nodes.len();
        self.nodes.push(Node {
            shape,
            data,
            grad: None,
            op,
        });
        Ok(id)
    }

    pub fn constant(&mut self, shape: &[usize], data: &[f64]) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dimension(
                "constant",
                format!("{numel} values for shape {shape:?}"),
                format!("{} values", data.len()),
            ));
        }
        self.push("constant", shape.to_vec(), data.to_vec(), Op::Leaf { param: None })
    }

    pub fn constant_tensor(&mut self, tensor: &Tensor) -> Result<NodeId> {
        self.constant(tensor.shape(), tensor.data())
    }

    pub fn constant_scalar(&mut self, value: f64) -> Result<NodeId> {
        self.constant(&[1], &[value])
    }

    /// Leaf backed by a stored parameter; its adjoint is harvested by
    /// `accumulate_grads`.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Result<NodeId> {
        let tensor = params.get(id);
        self.push(
            "param",
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            Op::Leaf { param: Some(id) },
        )
    }

    fn expect_vector(&self, op: &'static str, id: NodeId) -> Result<usize> {
        let shape = &self.nodes[id].shape;
        if shape.len() == 1 {
            Ok(shape[0])
        } else {
            Err(Error::dimension(op, "a 1-d tensor", format!("{shape:?}")))
        }
    }

    /// y = W x, with W of shape [out, in]. Weight gradients flow like in
    /// `linear` but there is no bias term.
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let w_shape = self.nodes[w].shape.clone();
        let in_dim = self.expect_vector("matvec", x)?;
        if w_shape.len() != 2 || w_shape[1] != in_dim {
            return Err(Error::dimension(
                "matvec",
                format!("weight [out, {in_dim}]"),
                format!("weight {w_shape:?} for input [{in_dim}]"),
            ));
        }
        let out_dim = w_shape[0];
        let w_data = &self.nodes[w].data;
        let x_data = &self.nodes[x].data;
        let mut out = vec![0.0; out_dim];
        for k in 0..out_dim {
            let row = &w_data[k * in_dim..(k + 1) * in_dim];
            out[k] = row.iter().zip(x_data).map(|(wv, xv)| wv * xv).sum();
        }
        self.push("matvec", vec![out_dim], out, Op::MatVec { w, x })
    }

    /// y[k] = sum_m W[k,m] x[m] + b[k].
    pub fn linear(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId> {
        let w_shape = self.nodes[w].shape.clone();
        let in_dim = self.expect_vector("linear", x)?;
        let b_dim = self.expect_vector("linear", b)?;
        if w_shape.len() != 2 || w_shape[1] != in_dim || w_shape[0] != b_dim {
            return Err(Error::dimension(
                "linear",
                format!("weight [{b_dim}, {in_dim}] with bias [{b_dim}]"),
                format!("weight {w_shape:?}, input [{in_dim}], bias [{b_dim}]"),
            ));
        }
        let out_dim = w_shape[0];
        let w_data = &self.nodes[w].data;
        let x_data = &self.nodes[x].data;
        let b_data = &self.nodes[b].data;
        let mut out = vec![0.0; out_dim];
        for k in 0..out_dim {
            let row = &w_data[k * in_dim..(k + 1) * in_dim];
            let dot: f64 = row.iter().zip(x_data).map(|(wv, xv)| wv * xv).sum();
            out[k] = dot + b_data[k];
        }
        self.push("linear", vec![out_dim], out, Op::Linear { w, x, b })
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let data: Vec<f64> = self.nodes[x].data.iter().map(|&v| v.max(0.0)).collect();
        let shape = self.nodes[x].shape.clone();
        self.push("relu", shape, data, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let data: Vec<f64> = self.nodes[x]
            .data
            .iter()
            .map(|&v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let shape = self.nodes[x].shape.clone();
        self.push("sigmoid", shape, data, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let data: Vec<f64> = self.nodes[x].data.iter().map(|&v| v.tanh()).collect();
        let shape = self.nodes[x].shape.clone();
        self.push("tanh", shape, data, Op::Tanh(x))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.nodes[a].shape == self.nodes[b].shape {
            Ok(())
        } else {
            Err(Error::dimension(
                op,
                format!("{:?}", self.nodes[a].shape),
                format!("{:?}", self.nodes[b].shape),
            ))
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let data: Vec<f64> = self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a].shape.clone();
        self.push("add", shape, data, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let data: Vec<f64> = self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a].shape.clone();
        self.push("mul", shape, data, Op::Mul(a, b))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let total: f64 = self.nodes[x].data.iter().sum();
        self.push("sum", vec![1], vec![total], Op::Sum(x))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        if !factor.is_finite() {
            return Err(Error::NonFinite { op: "scale" });
        }
        let data: Vec<f64> = self.nodes[x].data.iter().map(|&v| v * factor).collect();
        let shape = self.nodes[x].shape.clone();
        self.push("scale", shape, data, Op::Scale { x, factor })
    }

    /// y = s * x where `s` is a scalar node; gradients reach both factors.
    pub fn scale_by(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let s_len = self.expect_vector("scale_by", s)?;
        if s_len != 1 {
            return Err(Error::dimension("scale_by", "scalar [1]", format!("[{s_len}]")));
        }
        let sv = self.nodes[s].data[0];
        let data: Vec<f64> = self.nodes[x].data.iter().map(|&v| v * sv).collect();
        let shape = self.nodes[x].shape.clone();
        self.push("scale_by", shape, data, Op::ScaleBy { x, s })
    }

    pub fn one_minus(&mut self, x: NodeId) -> Result<NodeId> {
        let data: Vec<f64> = self.nodes[x].data.iter().map(|&v| 1.0 - v).collect();
        let shape = self.nodes[x].shape.clone();
        self.push("one_minus", shape, data, Op::OneMinus(x))
    }

    /// Elementwise mean over same-shape nodes. Each coordinate is summed in
    /// value order (not argument order) so the result is exactly invariant to
    /// permutations of `xs` despite floating-point non-associativity.
    pub fn mean_stack(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::contract("mean_stack", "empty input list"));
        }
        let shape = self.nodes[xs[0]].shape.clone();
        for &id in xs {
            if self.nodes[id].shape != shape {
                return Err(Error::dimension(
                    "mean_stack",
                    format!("{shape:?}"),
                    format!("{:?}", self.nodes[id].shape),
                ));
            }
        }
        let n = xs.len() as f64;
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0; numel];
        let mut column: Vec<f64> = Vec::with_capacity(xs.len());
        for (k, slot) in data.iter_mut().enumerate() {
            column.clear();
            column.extend(xs.iter().map(|&id| self.nodes[id].data[k]));
            column.sort_by(f64::total_cmp);
            *slot = column.iter().sum::<f64>() / n;
        }
        self.push("mean_stack", shape, data, Op::MeanStack(xs.to_vec()))
    }

    /// y = x / ||x||; rejects zero-norm inputs instead of dividing by zero.
    pub fn normalize(&mut self, x: NodeId) -> Result<NodeId> {
        let norm = self.nodes[x].data.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::degenerate("normalize", "zero-norm input".to_string()));
        }
        let data: Vec<f64> = self.nodes[x].data.iter().map(|&v| v / norm).collect();
        let shape = self.nodes[x].shape.clone();
        self.push("normalize", shape, data, Op::Normalize(x))
    }

    /// Cosine similarity of two vectors, as a scalar node in [-1, 1].
    pub fn cosine(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("cosine_similarity", a, b)?;
        self.expect_vector("cosine_similarity", a)?;
        let na = self.nodes[a].data.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = self.nodes[b].data.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return Err(Error::degenerate(
                "cosine_similarity",
                "zero-norm argument".to_string(),
            ));
        }
        let dot: f64 = self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(x, y)| x * y)
            .sum();
        let value = dot / (na * nb);
        self.push("cosine_similarity", vec![1], vec![value], Op::Cosine(a, b))
    }

    /// Scalar node holding x[index].
    pub fn gather(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let len = self.expect_vector("gather", x)?;
        if index >= len {
            return Err(Error::IndexOutOfRange {
                op: "gather",
                index,
                len,
            });
        }
        let value = self.nodes[x].data[index];
        self.push("gather", vec![1], vec![value], Op::Gather { x, index })
    }

    /// Concatenates 1-d nodes into one vector node.
    pub fn stack(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::contract("stack", "empty input list"));
        }
        let mut data = Vec::new();
        for &id in xs {
            self.expect_vector("stack", id)?;
            data.extend_from_slice(&self.nodes[id].data);
        }
        let len = data.len();
        self.push("stack", vec![len], data, Op::Stack(xs.to_vec()))
    }

    /// Cross-entropy of softmax(logits) against `label`. Returns the scalar
    /// loss node together with the probability vector.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<(NodeId, Tensor)> {
        let len = self.expect_vector("softmax_cross_entropy", logits)?;
        if label >= len {
            return Err(Error::IndexOutOfRange {
                op: "softmax_cross_entropy",
                index: label,
                len,
            });
        }
        let (loss, probs) = softmax_xent_parts(&self.nodes[logits].data, label);
        let id = self.push(
            "softmax_cross_entropy",
            vec![1],
            vec![loss],
            Op::SoftmaxXent { logits, label },
        )?;
        Ok((id, Tensor::vector(probs)?))
    }

    /// Reverse pass from a scalar loss node. Visits each node exactly once in
    /// reverse creation order and leaves adjoints readable via `grad`.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if loss >= self.nodes.len() {
            return Err(Error::IndexOutOfRange {
                op: "backward",
                index: loss,
                len: self.nodes.len(),
            });
        }
        if self.nodes[loss].data.len() != 1 {
            return Err(Error::contract(
                "backward",
                format!(
                    "loss must be a scalar node, got shape {:?}",
                    self.nodes[loss].shape
                ),
            ));
        }
        for node in &mut self.nodes {
            node.grad = Some(vec![0.0; node.data.len()]);
        }
        self.nodes[loss].grad.as_mut().unwrap()[0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            let grad = self.nodes[i].grad.clone().unwrap();
            if grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf { .. } => {}
                Op::MatVec { w, x } => self.backward_matvec(i, w, x, None, &grad),
                Op::Linear { w, x, b } => self.backward_matvec(i, w, x, Some(b), &grad),
                Op::Relu(x) => {
                    let dx: Vec<f64> = self.nodes[x]
                        .data
                        .iter()
                        .zip(&grad)
                        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                        .collect();
                    self.add_grad(x, &dx);
                }
                Op::Sigmoid(x) => {
                    let dx: Vec<f64> = self.nodes[i]
                        .data
                        .iter()
                        .zip(&grad)
                        .map(|(&y, &g)| g * y * (1.0 - y))
                        .collect();
                    self.add_grad(x, &dx);
                }
                Op::Tanh(x) => {
                    let dx: Vec<f64> = self.nodes[i]
                        .data
                        .iter()
                        .zip(&grad)
                        .map(|(&y, &g)| g * (1.0 - y * y))
                        .collect();
                    self.add_grad(x, &dx);
                }
                Op::Add(a, b) => {
                    self.add_grad(a, &grad);
                    self.add_grad(b, &grad);
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> = self.nodes[b].data.iter().zip(&grad).map(|(&y, &g)| g * y).collect();
                    let db: Vec<f64> = self.nodes[a].data.iter().zip(&grad).map(|(&x, &g)| g * x).collect();
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }
                Op::Sum(x) => {
                    let dx = vec![grad[0]; self.nodes[x].data.len()];
                    self.add_grad(x, &dx);
                }
                Op::Scale { x, factor } => {
                    let dx: Vec<f64> = grad.iter().map(|&g| g * factor).collect();
                    self.add_grad(x, &dx);
                }
                Op::ScaleBy { x, s } => {
                    let sv = self.nodes[s].data[0];
                    let dx: Vec<f64> = grad.iter().map(|&g| g * sv).collect();
                    let ds: f64 = self.nodes[x].data.iter().zip(&grad).map(|(&v, &g)| g * v).sum();
                    self.add_grad(x, &dx);
                    self.add_grad(s, &[ds]);
                }
                Op::OneMinus(x) => {
                    let dx: Vec<f64> = grad.iter().map(|&g| -g).collect();
                    self.add_grad(x, &dx);
                }
                Op::MeanStack(xs) => {
                    let n = xs.len() as f64;
                    let dx: Vec<f64> = grad.iter().map(|&g| g / n).collect();
                    for &x in &xs {
                        self.add_grad(x, &dx);
                    }
                }
                Op::Normalize(x) => {
                    let norm = self.nodes[x].data.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let y = self.nodes[i].data.clone();
                    let gy: f64 = grad.iter().zip(&y).map(|(&g, &yv)| g * yv).sum();
                    let dx: Vec<f64> = grad
                        .iter()
                        .zip(&y)
                        .map(|(&g, &yv)| (g - gy * yv) / norm)
                        .collect();
                    self.add_grad(x, &dx);
                }
                Op::Cosine(a, b) => {
                    let g = grad[0];
                    let na = self.nodes[a].data.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let nb = self.nodes[b].data.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let c = self.nodes[i].data[0];
                    let da: Vec<f64> = self.nodes[a]
                        .data
                        .iter()
                        .zip(&self.nodes[b].data)
                        .map(|(&av, &bv)| g * (bv / (na * nb) - c * av / (na * na)))
                        .collect();
                    let db: Vec<f64> = self.nodes[a]
                        .data
                        .iter()
                        .zip(&self.nodes[b].data)
                        .map(|(&av, &bv)| g * (av / (na * nb) - c * bv / (nb * nb)))
                        .collect();
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }
                Op::Gather { x, index } => {
                    let mut dx = vec![0.0; self.nodes[x].data.len()];
                    dx[index] = grad[0];
                    self.add_grad(x, &dx);
                }
                Op::Stack(xs) => {
                    let mut offset = 0;
                    for &x in &xs {
                        let len = self.nodes[x].data.len();
                        let dx = grad[offset..offset + len].to_vec();
                        self.add_grad(x, &dx);
                        offset += len;
                    }
                }
                Op::SoftmaxXent { logits, label } => {
                    let (_, probs) = softmax_xent_parts(&self.nodes[logits].data, label);
                    let g = grad[0];
                    let dl: Vec<f64> = probs
                        .iter()
                        .enumerate()
                        .map(|(k, &p)| g * (p - if k == label { 1.0 } else { 0.0 }))
                        .collect();
                    self.add_grad(logits, &dl);
                }
            }
        }
        Ok(())
    }

    fn backward_matvec(&mut self, out: NodeId, w: NodeId, x: NodeId, b: Option<NodeId>, grad: &[f64]) {
        let in_dim = self.nodes[x].data.len();
        let out_dim = self.nodes[out].data.len();
        let mut dw = vec![0.0; out_dim * in_dim];
        let mut dx = vec![0.0; in_dim];
        {
            let w_data = &self.nodes[w].data;
            let x_data = &self.nodes[x].data;
            for k in 0..out_dim {
                let g = grad[k];
                for m in 0..in_dim {
                    dw[k * in_dim + m] = g * x_data[m];
                    dx[m] += g * w_data[k * in_dim + m];
                }
            }
        }
        self.add_grad(w, &dw);
        self.add_grad(x, &dx);
        if let Some(b) = b {
            self.add_grad(b, grad);
        }
    }

    fn add_grad(&mut self, id: NodeId, delta: &[f64]) {
        let grad = self.nodes[id].grad.as_mut().expect("backward allocates all grads");
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Moves leaf adjoints into the parameter store. Frozen parameters are
    /// skipped, so nothing non-trainable ever accumulates a gradient.
    pub fn accumulate_grads(&self, params: &mut ParamSet) -> Result<()> {
        for node in &self.nodes {
            if let Op::Leaf { param: Some(id) } = node.op {
                if !params.get(id).requires_grad() {
                    continue;
                }
                let grad = node.grad.as_ref().ok_or_else(|| {
                    Error::contract("accumulate_grads", "backward has not been run")
                })?;
                params.get_mut(id).accumulate_grad(grad)?;
            }
        }
        Ok(())
    }
}
