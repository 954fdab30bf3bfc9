//! Append-only record of differentiable operations.
//!
//! Every op pushes its output as a new node whose inputs were created
//! earlier, so node order is already a topological order and the backward
//! pass is a single reverse sweep.

use crate::error::{Result, TensorError};
use crate::ops;
use crate::tensor::{Element, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        k: Var,
        b: Var,
        stride: usize,
        padding: usize,
    },
    BilinearResize {
        x: Var,
    },
    BilinearSample {
        x: Var,
        taps: Vec<ops::resample::Taps<T>>,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    ScatterAddRows {
        x: Var,
        idx: Vec<usize>,
    },
    ScatterRows {
        x: Var,
        base: Option<Var>,
        /// For each output row, the input row that wrote it last.
        winners: Vec<Option<usize>>,
    },
    Reshape {
        x: Var,
    },
    Transpose2d {
        x: Var,
    },
    BroadcastRows {
        x: Var,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    MulScalar {
        x: Var,
        s: T,
    },
    Sum {
        x: Var,
    },
    FocalLoss {
        logits: Var,
        spec: ops::loss::FocalSpec<T>,
    },
    SmoothL1 {
        pred: Var,
        spec: ops::loss::SmoothL1Spec<T>,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Linear { x, w, b } => vec![*x, *w, *b],
            Conv2d { x, k, b, .. } => vec![*x, *k, *b],
            Concat { xs, .. } => xs.clone(),
            ScatterRows { x, base, .. } => {
                let mut v = vec![*x];
                v.extend(base.iter().copied());
                v
            }
            Add { a, b } | Mul { a, b } => vec![*a, *b],
            BilinearResize { x }
            | BilinearSample { x, .. }
            | GatherRows { x, .. }
            | ScatterAddRows { x, .. }
            | Reshape { x }
            | Transpose2d { x }
            | BroadcastRows { x }
            | Relu { x }
            | Sigmoid { x }
            | Softmax { x, .. }
            | MulScalar { x, .. }
            | Sum { x } => vec![*x],
            FocalLoss { logits, .. } => vec![*logits],
            SmoothL1 { pred, .. } => vec![*pred],
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op<T>,
}

/// Reverse-mode differentiation context.
///
/// Single-threaded: build the graph, call [`Tape::backward`] once, read the
/// gradients, then drop the tape.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op
            .inputs()
            .iter()
            .any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward loss with respect to `v`. Always `None`
    /// for nodes that do not require a gradient.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    /// Populates gradients of `loss` with respect to every node that requires
    /// one and is reachable from it.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss).to_vec();
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {shape:?}"
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            self.grads = grads;
            return Ok(());
        }
        grads[loss.0] = Some(Tensor::ones(shape));

        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !matches!(node.op, Op::Leaf) {
                ops::backward(self, i, &gout, &mut grads)?;
            }
            grads[i] = Some(gout);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        self.grads = grads;
        Ok(())
    }
}

/// Adds `delta` into the gradient slot of `v` if `v` takes gradients.
pub(crate) fn accumulate<T: Element>(
    tape: &Tape<T>,
    grads: &mut [Option<Tensor<T>>],
    v: Var,
    delta: impl FnOnce(&mut [T]),
) {
    if !tape.nodes[v.0].requires_grad {
        return;
    }
    let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(tape.nodes[v.0].value.shape()));
    delta(slot.data_mut());
}
