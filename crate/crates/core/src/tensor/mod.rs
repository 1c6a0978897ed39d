//! Dense double-precision tensors with a reverse-mode tape.
//!
//! Forward values are computed eagerly as ops are recorded; `Tape::backward`
//! then sweeps the nodes once in reverse order. Storage is row-major and flat.
//! Broadcasting is limited to last-axis row ops (`add_row`, layer norm).

mod adam;
pub mod gradcheck;
mod ops;
mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use params::{NamedParam, ParamId, ParamStore};

use std::rc::Rc;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidTensor(format!("extents must be positive, got {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; numel], requires_grad: false, grad: None }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1], data: vec![value], requires_grad: false, grad: None }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidTensor("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of the last axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("rank >= 1")
    }

    /// Number of rows when viewed as a matrix over the last axis.
    pub fn rows(&self) -> usize {
        self.numel() / self.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.fill(0.0),
            None => self.grad = Some(vec![0.0; self.data.len()]),
        }
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An op whose forward was computed outside the tape and whose backward rule
/// is supplied by the implementor.
pub trait CustomOp {
    fn name(&self) -> &'static str;
    /// Gradients with respect to each input, in input order. `None` means the
    /// input receives no gradient from this op.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &[f64]) -> Vec<Option<Vec<f64>>>;
}

pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Relu(Var),
    Gelu(Var),
    Tanh(Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    CrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
    Sum(Var),
    Gather { table: Var, ids: Vec<usize> },
    ConcatRows(Vec<Var>),
    SelectRows { x: Var, indices: Vec<usize> },
    Reshape(Var),
    Custom { inputs: Vec<Var>, op: Rc<dyn CustomOp> },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::Relu(a) | Op::Gelu(a) | Op::Tanh(a) | Op::Sum(a) | Op::Reshape(a) => vec![*a],
            Op::Softmax { x, .. } | Op::SelectRows { x, .. } => vec![*x],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::Gather { table, .. } => vec![*table],
            Op::ConcatRows(v) => v.clone(),
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<ParamId>,
    needs_grad: bool,
}

/// Records operations in execution order. Every node's inputs precede it, so a
/// single reverse sweep visits each node exactly once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forgets every node recorded after the first `len`. Handles to the
    /// dropped nodes must not be used again.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    /// Records a leaf. Gradients are tracked when `value.requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let needs_grad = value.requires_grad;
        self.push_node(value, Op::Leaf, None, needs_grad)
    }

    /// Records a constant leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        let mut value = value;
        value.requires_grad = false;
        self.leaf(value)
    }

    /// Records a copy of a stored parameter as a gradient-tracking leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.get(id);
        let value = Tensor { shape: t.shape.clone(), data: t.data.clone(), requires_grad: true, grad: None };
        self.push_node(value, Op::Leaf, Some(id), true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    fn push_node(&mut self, value: Tensor, op: Op, param: Option<ParamId>, needs_grad: bool) -> Var {
        debug_assert!(op.inputs().iter().all(|i| i.0 < self.nodes.len()));
        self.nodes.push(Node { value, op, param, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Var {
        let needs_grad = op.inputs().iter().any(|i| self.nodes[i.0].needs_grad);
        let value = Tensor { shape, data, requires_grad: false, grad: None };
        self.push_node(value, op, None, needs_grad)
    }

    /// Records the result of a custom op whose forward value was computed by
    /// the caller.
    pub fn custom(&mut self, inputs: Vec<Var>, output: Tensor, op: Rc<dyn CustomOp>) -> Var {
        let Tensor { shape, data, .. } = output;
        self.push(shape, data, Op::Custom { inputs, op })
    }

    /// Reverse sweep from a scalar loss. Gradients are added to any existing
    /// gradient on requires-grad leaves; callers zero between steps.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.nodes[loss.0].value.shape.clone();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                if node.value.requires_grad {
                    let slot = self.nodes[idx].value.grad.get_or_insert_with(|| vec![0.0; g.len()]);
                    for (s, v) in slot.iter_mut().zip(&g) {
                        *s += v;
                    }
                }
                continue;
            }
            for (input, contrib) in ops::backward_rule(&self.nodes, idx, &g) {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(&contrib) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(())
    }

    /// Parameter leaves recorded on this tape with their gradients, in
    /// recording order.
    pub fn param_grads(&self) -> Vec<(ParamId, &[f64])> {
        self.nodes
            .iter()
            .filter_map(|n| match (n.param, n.value.grad.as_deref()) {
                (Some(id), Some(g)) => Some((id, g)),
                _ => None,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests;
