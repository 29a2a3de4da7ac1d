use std::ops::Deref;

use crate::kernels::{self, Window};
use crate::{Element, Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Value<'a, T> {
    Owned(Tensor<T>),
    Borrowed(&'a Tensor<T>),
}

impl<T> Deref for Value<'_, T> {
    type Target = Tensor<T>;

    fn deref(&self) -> &Tensor<T> {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, win: Window },
    ConvTranspose2d { input: Var, weight: Var, bias: Var, win: Window },
    MaxPool { input: Var, argmax: Vec<usize> },
    AdaptiveAvgPool { input: Var },
    Relu { input: Var },
    Sigmoid { input: Var },
    Dropout { input: Var, mask: Vec<T> },
    Linear { input: Var, weight: Var, bias: Var },
    Concat { a: Var, b: Var },
    Reshape { input: Var },
    LogSoftmax { input: Var },
    Nll { input: Var, targets: Vec<usize> },
    Mse { pred: Var, target: Var },
    Add { a: Var, b: Var },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d { input, weight, bias, .. }
            | Op::ConvTranspose2d { input, weight, bias, .. }
            | Op::Linear { input, weight, bias } => vec![input, weight, bias],
            Op::MaxPool { input, .. }
            | Op::AdaptiveAvgPool { input }
            | Op::Relu { input }
            | Op::Sigmoid { input }
            | Op::Dropout { input, .. }
            | Op::Reshape { input }
            | Op::LogSoftmax { input }
            | Op::Nll { input, .. } => vec![input],
            Op::Concat { a, b } | Op::Add { a, b } => vec![a, b],
            Op::Mse { pred, target } => vec![pred, target],
        }
    }
}

pub(crate) struct Node<'a, T> {
    pub(crate) value: Value<'a, T>,
    pub(crate) grad: Option<Vec<T>>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op<T>,
}

/// Append-only tape of tensor operations.
///
/// Nodes are recorded in creation order, which is a topological order, so
/// backward simply walks the tape in reverse. Parameters can be borrowed
/// instead of copied for the lifetime of the graph.
pub struct Graph<'a, T: Element> {
    pub(crate) nodes: Vec<Node<'a, T>>,
}

impl<T: Element> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Element> Graph<'a, T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Borrowed trainable leaf.
    pub fn param(&mut self, tensor: &'a Tensor<T>) -> Var {
        self.push_leaf(Value::Borrowed(tensor), true)
    }

    /// Borrowed leaf that never receives a gradient.
    pub fn frozen(&mut self, tensor: &'a Tensor<T>) -> Var {
        self.push_leaf(Value::Borrowed(tensor), false)
    }

    /// Owned leaf that receives a gradient.
    pub fn variable(&mut self, tensor: Tensor<T>) -> Var {
        self.push_leaf(Value::Owned(tensor), true)
    }

    /// Owned leaf that never receives a gradient (inputs, targets).
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.push_leaf(Value::Owned(tensor), false)
    }

    fn push_leaf(&mut self, value: Value<'a, T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, requires_grad, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value: Value::Owned(value), grad: None, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Accumulated gradient, `None` if backward never reached this node.
    pub fn grad(&self, var: Var) -> Option<&[T]> {
        self.nodes[var.0].grad.as_deref()
    }

    /// Gradient with unreached nodes reported as zeros.
    pub fn grad_or_zeros(&self, var: Var) -> Vec<T> {
        self.grad(var).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); self.value(var).numel()])
    }

    pub fn take_grad(&mut self, var: Var) -> Option<Vec<T>> {
        self.nodes[var.0].grad.take()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Accumulate `d loss / d node` into every node that requires grad.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let value = self.value(loss);
        if value.numel() != 1 {
            return Err(TensorError::NotScalar(value.shape().to_vec()));
        }
        self.backward_from(loss, vec![T::one()])
    }

    /// Backpropagate an arbitrary upstream gradient `seed` from `root`.
    pub fn backward_from(&mut self, root: Var, seed: Vec<T>) -> Result<()> {
        if seed.len() != self.value(root).numel() {
            return Err(TensorError::shape(format!(
                "seed has {} elements, node has {}",
                seed.len(),
                self.value(root).numel()
            )));
        }
        if !self.nodes[root.0].requires_grad {
            return Err(TensorError::DisconnectedGraph);
        }
        // leaves accumulate across calls; intermediates hold only this pass
        for node in &mut self.nodes[..=root.0] {
            if !matches!(node.op, Op::Leaf) {
                node.grad = None;
            }
        }
        accumulate(&mut self.nodes[root.0], seed);
        for i in (0..=root.0).rev() {
            let (lower, upper) = self.nodes.split_at_mut(i);
            let node = &upper[0];
            let Some(grad_out) = node.grad.as_deref() else { continue };
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            for (target, grad) in backward_op(node, grad_out, lower) {
                accumulate(&mut lower[target.0], grad);
            }
        }
        Ok(())
    }
}

fn accumulate<T: Element>(node: &mut Node<'_, T>, grad: Vec<T>) {
    if !node.requires_grad {
        return;
    }
    match node.grad.as_mut() {
        None => node.grad = Some(grad),
        Some(acc) => acc.iter_mut().zip(grad).for_each(|(a, g)| *a += g),
    }
}

/// Input gradients of one recorded op, skipping inputs that need none.
fn backward_op<T: Element>(node: &Node<'_, T>, g: &[T], nodes: &[Node<'_, T>]) -> Vec<(Var, Vec<T>)> {
    let needs = |v: Var| nodes[v.0].requires_grad;
    let val = |v: Var| -> &Tensor<T> { &nodes[v.0].value };
    let out = &node.value;
    let mut grads = Vec::new();
    match &node.op {
        Op::Leaf => {}
        Op::Conv2d { input, weight, bias, win } | Op::ConvTranspose2d { input, weight, bias, win } => {
            let x = val(*input);
            let dims = x.dims4().expect("recorded conv input is 4-D");
            let transposed = matches!(node.op, Op::ConvTranspose2d { .. });
            let co = out.shape()[1];
            let backward = if transposed { kernels::conv_transpose2d_backward } else { kernels::conv2d_backward };
            let cg = backward(x.data(), dims, val(*weight).data(), co, *win, g, needs(*input));
            if let Some(gx) = cg.input {
                grads.push((*input, gx));
            }
            if needs(*weight) {
                grads.push((*weight, cg.weight));
            }
            if needs(*bias) {
                grads.push((*bias, cg.bias));
            }
        }
        Op::MaxPool { input, argmax } => {
            let mut gx = vec![T::zero(); val(*input).numel()];
            for (&idx, &gv) in argmax.iter().zip(g) {
                gx[idx] += gv;
            }
            grads.push((*input, gx));
        }
        Op::AdaptiveAvgPool { input } => {
            let dims = val(*input).dims4().expect("recorded pool input is 4-D");
            let [_, _, oh, ow] = out.dims4().expect("pool output is 4-D");
            grads.push((*input, kernels::adaptive_avg_pool2d_backward(g, dims, oh, ow)));
        }
        Op::Relu { input } => {
            let gx = out.data().iter().zip(g).map(|(&y, &gv)| if y > T::zero() { gv } else { T::zero() });
            grads.push((*input, gx.collect()));
        }
        Op::Sigmoid { input } => {
            let gx = out.data().iter().zip(g).map(|(&y, &gv)| gv * y * (T::one() - y));
            grads.push((*input, gx.collect()));
        }
        Op::Dropout { input, mask } => {
            grads.push((*input, mask.iter().zip(g).map(|(&m, &gv)| m * gv).collect()));
        }
        Op::Linear { input, weight, bias } => {
            let x = val(*input);
            let [n, f] = x.dims2().expect("linear input is 2-D");
            let o = out.shape()[1];
            if needs(*input) {
                let mut gx = vec![T::zero(); n * f];
                kernels::matmul(n, o, f, g, false, val(*weight).data(), false, T::zero(), &mut gx);
                grads.push((*input, gx));
            }
            if needs(*weight) {
                let mut gw = vec![T::zero(); o * f];
                kernels::matmul(o, n, f, g, true, x.data(), false, T::zero(), &mut gw);
                grads.push((*weight, gw));
            }
            if needs(*bias) {
                let mut gb = vec![T::zero(); o];
                for row in g.chunks(o) {
                    gb.iter_mut().zip(row).for_each(|(b, &gv)| *b += gv);
                }
                grads.push((*bias, gb));
            }
        }
        Op::Concat { a, b } => {
            let [n, ca, h, w] = val(*a).dims4().expect("concat input is 4-D");
            let cb = val(*b).shape()[1];
            let (sa, sb) = (ca * h * w, cb * h * w);
            let mut ga = Vec::with_capacity(n * sa);
            let mut gb = Vec::with_capacity(n * sb);
            for chunk in g.chunks(sa + sb) {
                ga.extend_from_slice(&chunk[..sa]);
                gb.extend_from_slice(&chunk[sa..]);
            }
            grads.push((*a, ga));
            grads.push((*b, gb));
        }
        Op::Reshape { input } => grads.push((*input, g.to_vec())),
        Op::LogSoftmax { input } => {
            let cols = *out.shape().last().expect("log-softmax input has a class axis");
            let mut gx = Vec::with_capacity(g.len());
            for (y_row, g_row) in out.data().chunks(cols).zip(g.chunks(cols)) {
                let total: T = g_row.iter().copied().sum();
                gx.extend(y_row.iter().zip(g_row).map(|(&y, &gv)| gv - y.exp() * total));
            }
            grads.push((*input, gx));
        }
        Op::Nll { input, targets } => {
            let x = val(*input);
            let cols = x.shape()[1];
            let scale = g[0] / T::from_f64(targets.len() as f64);
            let mut gx = vec![T::zero(); x.numel()];
            for (row, &t) in targets.iter().enumerate() {
                gx[row * cols + t] = -scale;
            }
            grads.push((*input, gx));
        }
        Op::Mse { pred, target } => {
            let (p, t) = (val(*pred).data(), val(*target).data());
            let scale = T::from_f64(2.0) * g[0] / T::from_f64(p.len() as f64);
            let diff: Vec<T> = p.iter().zip(t).map(|(&a, &b)| scale * (a - b)).collect();
            if needs(*target) {
                grads.push((*target, diff.iter().map(|&d| -d).collect()));
            }
            grads.push((*pred, diff));
        }
        Op::Add { a, b } => {
            grads.push((*a, g.to_vec()));
            grads.push((*b, g.to_vec()));
        }
    }
    grads.retain(|(v, _)| needs(*v));
    grads
}
