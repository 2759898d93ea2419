//! Reverse-mode differentiation over a recorded tape.
//!
//! A [`Graph`] records every operation as a node holding its forward value
//! and whatever it needs for the backward pass. Parents always precede
//! children on the tape, so walking it backwards is a valid reverse
//! topological order.

mod gradcheck;
mod ops;

pub use gradcheck::{grad_check, op_suite, GradCheckReport, OP_NAMES, REL_ERROR_FLOOR};
pub use ops::{Conv2dSpec, Conv3dSpec, Kernel2d, Kernel3d, Padding, PoolKind, PoolSpec, Window};

use crate::error::{Error, Result};
use crate::kernels::{ConvGeometry, Extent3};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Conv {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geom: ConvGeometry,
        batch: usize,
        input: Extent3,
    },
    Relu {
        x: NodeId,
    },
    MaxPool {
        x: NodeId,
        argmax: Vec<usize>,
    },
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Dropout {
        x: NodeId,
        mask: Vec<F>,
    },
    Sum {
        x: NodeId,
        branches: Vec<NodeId>,
    },
    Reshape {
        x: NodeId,
    },
    SoftmaxXent {
        logits: NodeId,
        probs: Tensor<F>,
        truth: Tensor<F>,
    },
    WeightedSum {
        x: NodeId,
        weights: Tensor<F>,
    },
}

impl<F> Op<F> {
    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Conv { x, w, b, .. } | Op::Linear { x, w, b } => vec![*x, *w, *b],
            Op::Relu { x }
            | Op::MaxPool { x, .. }
            | Op::Dropout { x, .. }
            | Op::Reshape { x }
            | Op::WeightedSum { x, .. } => vec![*x],
            Op::Sum { x, branches } => std::iter::once(*x)
                .chain(branches.iter().copied())
                .collect(),
            Op::SoftmaxXent { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// A tape of differentiable operations.
#[derive(Debug, Default)]
pub struct Graph<F: Scalar = f32> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a trainable leaf (parameter or differentiable input).
    pub fn param(&mut self, value: Tensor<F>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Adds a constant leaf; no gradient is propagated into it.
    pub fn constant(&mut self, value: Tensor<F>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn parents(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.parents()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, leaf_requires: bool) -> NodeId {
        let requires_grad = match op {
            Op::Leaf => leaf_requires,
            _ => op.parents().iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Back-propagates from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<F>> {
        if self.value(loss).len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::fill(self.value(loss).shape(), F::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            for (parent, g) in self.backward_node(node, &dy)? {
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
            grads[idx] = Some(dy);
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[idx].is_none() {
                grads[idx] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn backward_node(&self, node: &Node<F>, dy: &Tensor<F>) -> Result<Vec<(NodeId, Tensor<F>)>> {
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv {
                x,
                w,
                b,
                geom,
                batch,
                input,
            } => {
                let need_dx = self.wants(*x);
                let grads = crate::kernels::conv_backward(
                    self.value(*x).data(),
                    *batch,
                    *input,
                    self.value(*w).data(),
                    dy.data(),
                    geom,
                    need_dx,
                )?;
                if let Some(dx) = grads.dx {
                    out.push((*x, Tensor::from_vec(self.value(*x).shape(), dx)?));
                }
                if self.wants(*w) {
                    out.push((*w, Tensor::from_vec(self.value(*w).shape(), grads.dw)?));
                }
                if self.wants(*b) {
                    out.push((*b, Tensor::from_vec(self.value(*b).shape(), grads.db)?));
                }
            }
            Op::Relu { x } => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&v, &g)| if v > F::zero() { g } else { F::zero() })
                    .collect();
                out.push((*x, Tensor::from_vec(xv.shape(), data)?));
            }
            Op::MaxPool { x, argmax } => {
                let xv = self.value(*x);
                let dx = crate::kernels::maxpool_backward(dy.data(), argmax, xv.len());
                out.push((*x, Tensor::from_vec(xv.shape(), dx)?));
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (batch, features) = (xv.shape()[0], xv.shape()[1]);
                let outputs = wv.shape()[0];
                if self.wants(*x) {
                    let mut dx = vec![F::zero(); batch * features];
                    crate::tensor::gemm_nn(batch, features, outputs, dy.data(), wv.data(), &mut dx);
                    out.push((*x, Tensor::from_vec(xv.shape(), dx)?));
                }
                if self.wants(*w) {
                    let mut dw = vec![F::zero(); outputs * features];
                    crate::tensor::gemm_tn(outputs, features, batch, dy.data(), xv.data(), &mut dw);
                    out.push((*w, Tensor::from_vec(wv.shape(), dw)?));
                }
                if self.wants(*b) {
                    let mut db = vec![F::zero(); outputs];
                    for row in dy.data().chunks(outputs) {
                        for (a, &g) in db.iter_mut().zip(row) {
                            *a += g;
                        }
                    }
                    out.push((*b, Tensor::from_vec(&[outputs], db)?));
                }
            }
            Op::Dropout { x, mask } => {
                let data = dy.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                out.push((*x, Tensor::from_vec(dy.shape(), data)?));
            }
            Op::Sum { x, branches } => {
                for id in std::iter::once(x).chain(branches) {
                    if self.wants(*id) {
                        out.push((*id, dy.clone()));
                    }
                }
            }
            Op::Reshape { x } => {
                out.push((*x, dy.reshape(self.value(*x).shape())?));
            }
            Op::SoftmaxXent {
                logits,
                probs,
                truth,
            } => {
                let scale = dy.data()[0] / F::from_f64(probs.shape()[0] as f64);
                let data = probs
                    .data()
                    .iter()
                    .zip(truth.data())
                    .map(|(&q, &r)| (q - r) * scale)
                    .collect();
                out.push((*logits, Tensor::from_vec(probs.shape(), data)?));
            }
            Op::WeightedSum { x, weights } => {
                let g = dy.data()[0];
                out.push((*x, weights.scale(g)));
            }
        }
        Ok(out)
    }
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<F>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<F>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}
