//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every primitive in execution order, so node indices
//! are already a topological order and reverse accumulation is a single
//! backwards sweep. Graphs are confined to one task; build one per sample
//! when running forwards concurrently.

mod kernels;
mod ops;

pub use kernels::{gelu, sigmoid};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A primitive whose backward pass is supplied by the caller.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Adjoints for each input, given the adjoint of the output.
    fn backward(&self, grad_out: &Tensor) -> Result<Vec<Option<Tensor>>>;
}

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Broadcast(Var),
    SumAll(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Softmax { input: Var, axis: usize },
    LogSoftmax { input: Var, axis: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Conv2d { x: Var, kernel: Var, geom: kernels::ConvGeom, cols: Vec<f64> },
    Upsample(Var),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Log(Var),
    MeanPool(Var),
    Bce { pred: Var, target: Var },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
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

    /// A leaf that receives a gradient on [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that is treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant copy of `v`; gradients do not flow back through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            other => inputs_of(other).iter().any(|i| self.nodes[i.0].requires_grad),
        };
        debug_assert!(value.len() > 0);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse accumulation from a scalar loss. Afterwards [`Graph::grad`]
    /// returns the adjoint of every gradient-requiring leaf (zeros for leaves
    /// the loss does not depend on).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward (loss must be scalar)", self.shape(loss), &[1]));
        }
        let seed = Tensor::ones(self.shape(loss));
        let mut grads = self.vjp(loss, &seed)?;
        self.grads = (0..self.nodes.len())
            .map(|i| {
                let n = &self.nodes[i];
                if matches!(n.op, Op::Leaf) && n.requires_grad {
                    Some(grads[i].take().unwrap_or_else(|| Tensor::zeros(n.value.shape())))
                } else {
                    None
                }
            })
            .collect();
        Ok(())
    }

    /// Gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Vector-Jacobian product: the adjoint of every node given `seed` as
    /// the adjoint of `output`. Does not mutate the graph, so it can be
    /// replayed with different seeds.
    pub fn vjp(&self, output: Var, seed: &Tensor) -> Result<Vec<Option<Tensor>>> {
        if seed.shape() != self.shape(output) {
            return Err(Error::shape("vjp seed", seed.shape(), self.shape(output)));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(seed.clone());
        for i in (0..=output.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(gy);
                continue;
            }
            let contributions = self.backward_node(i, &gy)?;
            for (input, g) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                accumulate(&mut grads[input.0], g);
            }
        }
        grads.resize_with(self.nodes.len(), || None);
        Ok(grads)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

pub(crate) fn inputs_of(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
        Op::Affine(a, _)
        | Op::Transpose(a)
        | Op::Reshape(a)
        | Op::Broadcast(a)
        | Op::SumAll(a)
        | Op::Upsample(a)
        | Op::Relu(a)
        | Op::Gelu(a)
        | Op::Sigmoid(a)
        | Op::Log(a)
        | Op::MeanPool(a) => vec![*a],
        Op::Concat { inputs, .. } | Op::Custom { inputs, .. } => inputs.clone(),
        Op::Slice { input, .. } | Op::Softmax { input, .. } | Op::LogSoftmax { input, .. } => vec![*input],
        Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
        Op::Conv2d { x, kernel, .. } => vec![*x, *kernel],
        Op::Bce { pred, target } => vec![*pred, *target],
    }
}
