//! Reverse-mode autodiff tape.
//!
//! Every operation appends a node holding its output value and, when any input
//! requires a gradient, the record needed to run its backward rule. Nodes are
//! appended after their inputs, so the tape order is a topological order and
//! backward is a single reverse sweep.

use std::sync::atomic::{AtomicU64, Ordering};

use super::broadcast::{binary, mean_axes, reduce_to};
use super::{Element, Tensor};
use crate::error::{Error, Result};
use crate::nn::kernels::{self, BnTrainCache};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BackwardMode {
    /// Clear previous gradients before filling.
    #[default]
    Reset,
    /// Add into gradients left by a previous backward pass.
    Accumulate,
}

pub(crate) type CustomBackward<T> = Box<dyn Fn(&Tensor<T>, &Tensor<T>, &[T]) -> Vec<T> + Send + Sync>;

pub(crate) enum Op<T: Element> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Sum(usize),
    Mean { x: usize, count: usize },
    Concat(Vec<usize>),
    SliceChannels { x: usize, start: usize },
    Relu(usize),
    Sigmoid(usize),
    Conv2d { x: usize, w: usize, b: Option<usize>, stride: usize, pad: usize },
    BatchNormTrain { x: usize, gamma: usize, beta: usize, cache: BnTrainCache<T> },
    BatchNormEval { x: usize, gamma: usize, beta: usize, mean: Vec<T>, inv_std: Vec<T> },
    MaxPool { x: usize, argmax: Vec<usize> },
    GlobalAvgPool(usize),
    Upsample { x: usize, scale: usize, align_corners: bool },
    Softmax(usize),
    CrossEntropy { logits: usize, labels: Vec<u8>, ignore: Option<u8>, probs: Tensor<T>, count: usize },
    Custom { x: usize, backward: CustomBackward<T> },
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

pub struct Graph<T: Element = f32> {
    id: u64,
    nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            check_finite: false,
        }
    }

    /// Fail any operation whose output contains NaN or infinity.
    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf value. Gradients are only produced for leaves created with `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        assert_eq!(v.graph, self.id, "variable belongs to another graph");
        &self.nodes[v.index].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        assert_eq!(v.graph, self.id, "variable belongs to another graph");
        let node = &self.nodes[v.index];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub(crate) fn check(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::MissingGraph("variable is not recorded on this graph".into()));
        }
        Ok(v.index)
    }

    pub(crate) fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op: if requires_grad { op } else { Op::Leaf },
            requires_grad,
            grad: None,
        });
        Ok(Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        })
    }

    pub(crate) fn val(&self, i: usize) -> &Tensor<T> {
        &self.nodes[i].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let y = binary("add", self.val(ia), self.val(ib), |x, y| x + y)?;
        self.push("add", y, Op::Add(ia, ib), &[ia, ib])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let y = binary("sub", self.val(ia), self.val(ib), |x, y| x - y)?;
        self.push("sub", y, Op::Sub(ia, ib), &[ia, ib])
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let y = binary("mul", self.val(ia), self.val(ib), |x, y| x * y)?;
        self.push("mul", y, Op::Mul(ia, ib), &[ia, ib])
    }

    pub fn scale(&mut self, x: Var, k: T) -> Result<Var> {
        let ix = self.check(x)?;
        let y = self.val(ix).map(|v| v * k);
        self.push("scale", y, Op::Scale(ix, k), &[ix])
    }

    /// Sum of every element, as a tensor with all extents 1.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let v = self.val(ix);
        let s = v.data().iter().fold(T::zero(), |a, &b| a + b);
        let y = Tensor::new(vec![1; v.rank().max(1)], vec![s])?;
        self.push("sum", y, Op::Sum(ix), &[ix])
    }

    /// Mean over `axes`; reduced axes keep extent 1.
    pub fn reduce_mean(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let ix = self.check(x)?;
        let (y, count) = mean_axes(self.val(ix), axes)?;
        self.push("reduce_mean", y, Op::Mean { x: ix, count }, &[ix])
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor<T>> = idx.iter().map(|&i| self.val(i)).collect();
        let y = Tensor::concat_channels(&refs)?;
        self.push("concat_channels", y, Op::Concat(idx.clone()), &idx)
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let y = self.val(ix).slice_channels(start, len)?;
        self.push("slice_channels", y, Op::SliceChannels { x: ix, start }, &[ix])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let y = self.val(ix).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push("relu", y, Op::Relu(ix), &[ix])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let y = self.val(ix).map(sigmoid);
        self.push("sigmoid", y, Op::Sigmoid(ix), &[ix])
    }

    /// Unary op with a caller-supplied backward rule `(x, y, dy) -> dx`.
    pub fn custom_unary(
        &mut self,
        x: Var,
        forward: impl Fn(T) -> T,
        backward: impl Fn(&Tensor<T>, &Tensor<T>, &[T]) -> Vec<T> + Send + Sync + 'static,
    ) -> Result<Var> {
        let ix = self.check(x)?;
        let y = self.val(ix).map(forward);
        self.push(
            "custom",
            y,
            Op::Custom {
                x: ix,
                backward: Box::new(backward),
            },
            &[ix],
        )
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.backward_with(loss, BackwardMode::Reset)
    }

    /// Propagates d(loss)/d(node) to every node that requires a gradient.
    pub fn backward_with(&mut self, loss: Var, mode: BackwardMode) -> Result<()> {
        let il = self.check(loss)?;
        let lv = &self.nodes[il].value;
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !self.nodes[il].requires_grad {
            return Err(Error::MissingGraph(
                "loss does not depend on any value that requires a gradient".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[il] = Some(vec![T::one(); lv.numel()]);
        for i in (0..=il).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if !node.requires_grad {
                continue;
            }
            match (mode, &node.op, g) {
                (BackwardMode::Accumulate, Op::Leaf, Some(g)) => match node.grad.as_mut() {
                    Some(prev) => prev.iter_mut().zip(g).for_each(|(p, v)| *p = *p + v),
                    None => node.grad = Some(g),
                },
                (BackwardMode::Accumulate, Op::Leaf, None) => {}
                (_, _, g) => node.grad = g,
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let out = &self.nodes[i].value;
        let mut send = |j: usize, contrib: Vec<T>| {
            if !self.nodes[j].requires_grad {
                return;
            }
            match grads[j].as_mut() {
                Some(acc) => acc.iter_mut().zip(contrib).for_each(|(a, c)| *a = *a + c),
                None => grads[j] = Some(contrib),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, reduce_to(g, out.shape(), self.val(*a).shape()));
                send(*b, reduce_to(g, out.shape(), self.val(*b).shape()));
            }
            Op::Sub(a, b) => {
                send(*a, reduce_to(g, out.shape(), self.val(*a).shape()));
                let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                send(*b, reduce_to(&neg, out.shape(), self.val(*b).shape()));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                let gt = Tensor::new(out.shape().to_vec(), g.to_vec())?;
                if self.nodes[*a].requires_grad {
                    let prod = binary("mul", &gt, vb, |x, y| x * y)?;
                    send(*a, reduce_to(prod.data(), out.shape(), va.shape()));
                }
                if self.nodes[*b].requires_grad {
                    let prod = binary("mul", &gt, va, |x, y| x * y)?;
                    send(*b, reduce_to(prod.data(), out.shape(), vb.shape()));
                }
            }
            Op::Scale(x, k) => send(*x, g.iter().map(|&v| v * *k).collect()),
            Op::Sum(x) => send(*x, vec![g[0]; self.val(*x).numel()]),
            Op::Mean { x, count } => {
                let inv = T::one() / T::from_f64(*count as f64);
                let scaled: Vec<T> = g.iter().map(|&v| v * inv).collect();
                let xs = self.val(*x).shape();
                let ones = Tensor::<T>::zeros(xs.to_vec());
                let gt = Tensor::new(out.shape().to_vec(), scaled)?;
                let spread = binary("mean backward", &ones, &gt, |_, y| y)?;
                send(*x, spread.into_data());
            }
            Op::Concat(parts) => {
                let (n, _, h, w) = out.dims4()?;
                let total = out.shape()[1];
                let plane = h * w;
                let mut offset = 0;
                for &p in parts {
                    let pc = self.val(p).shape()[1];
                    let mut piece = Vec::with_capacity(n * pc * plane);
                    for b in 0..n {
                        let base = (b * total + offset) * plane;
                        piece.extend_from_slice(&g[base..base + pc * plane]);
                    }
                    send(p, piece);
                    offset += pc;
                }
            }
            Op::SliceChannels { x, start } => {
                let xs = self.val(*x).shape();
                let (n, c, plane) = (xs[0], xs[1], xs[2] * xs[3]);
                let len = out.shape()[1];
                let mut full = vec![T::zero(); n * c * plane];
                for b in 0..n {
                    let dst = (b * c + start) * plane;
                    full[dst..dst + len * plane].copy_from_slice(&g[b * len * plane..(b + 1) * len * plane]);
                }
                send(*x, full);
            }
            Op::Relu(x) => send(
                *x,
                g.iter()
                    .zip(out.data())
                    .map(|(&gv, &y)| if y > T::zero() { gv } else { T::zero() })
                    .collect(),
            ),
            Op::Sigmoid(x) => send(
                *x,
                g.iter().zip(out.data()).map(|(&gv, &y)| gv * y * (T::one() - y)).collect(),
            ),
            Op::Conv2d { x, w, b, stride, pad } => {
                let gr = kernels::conv2d_backward(self.val(*x), self.val(*w), b.is_some(), *stride, *pad, g)?;
                send(*x, gr.input.into_data());
                send(*w, gr.weight.into_data());
                if let (Some(b), Some(gb)) = (b, gr.bias) {
                    send(*b, gb.into_data());
                }
            }
            Op::BatchNormTrain { x, gamma, beta, cache } => {
                let (gx, gg, gb) =
                    kernels::batch_norm_train_backward(self.val(*x).shape(), self.val(*gamma).data(), cache, g);
                send(*x, gx);
                send(*gamma, gg);
                send(*beta, gb);
            }
            Op::BatchNormEval { x, gamma, beta, mean, inv_std } => {
                let xv = self.val(*x);
                let s = xv.shape();
                let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
                let gam = self.val(*gamma).data();
                let mut gx = vec![T::zero(); g.len()];
                let mut gg = vec![T::zero(); c];
                let mut gb = vec![T::zero(); c];
                for bi in 0..n {
                    for ch in 0..c {
                        for k in (bi * c + ch) * plane..(bi * c + ch + 1) * plane {
                            gx[k] = g[k] * gam[ch] * inv_std[ch];
                            gg[ch] = gg[ch] + g[k] * (xv.data()[k] - mean[ch]) * inv_std[ch];
                            gb[ch] = gb[ch] + g[k];
                        }
                    }
                }
                send(*x, gx);
                send(*gamma, gg);
                send(*beta, gb);
            }
            Op::MaxPool { x, argmax } => {
                let mut gx = vec![T::zero(); self.val(*x).numel()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    gx[src] = gx[src] + gv;
                }
                send(*x, gx);
            }
            Op::GlobalAvgPool(x) => {
                let xs = self.val(*x).shape();
                let plane = xs[2] * xs[3];
                let inv = T::one() / T::from_f64(plane as f64);
                let mut gx = Vec::with_capacity(self.val(*x).numel());
                for &gv in g {
                    gx.extend(std::iter::repeat_n(gv * inv, plane));
                }
                send(*x, gx);
            }
            Op::Upsample { x, scale, align_corners } => {
                send(
                    *x,
                    kernels::bilinear_upsample_backward(self.val(*x).shape(), *scale, *align_corners, g),
                );
            }
            Op::Softmax(x) => send(*x, kernels::softmax_channels_backward(out, g)),
            Op::CrossEntropy { logits, labels, ignore, probs, count } => {
                send(*logits, kernels::cross_entropy_backward(probs, labels, *ignore, *count, g[0]));
            }
            Op::Custom { x, backward } => send(*x, backward(self.val(*x), out, g)),
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_fn([2, 3], |i| i as f64));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn square_through_shared_input_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn reset_and_accumulate_modes() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::ones([2]));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0]);
        g.backward_with(s, BackwardMode::Accumulate).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn backward_contract_errors() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::ones([2]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
        let c = g.constant(Tensor::ones([1]));
        assert!(matches!(g.backward(c), Err(Error::MissingGraph(_))));
        let mut other = Graph::<f64>::new();
        let y = other.param(Tensor::ones([1]));
        assert!(matches!(g.backward(y), Err(Error::MissingGraph(_))));
    }

    #[test]
    fn finite_checks_are_opt_in() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new([1], vec![f64::INFINITY]).unwrap());
        let z = g.constant(Tensor::new([1], vec![0.0]).unwrap());
        assert!(g.mul(x, z).is_ok());
        let mut g = Graph::<f64>::new().with_finite_checks(true);
        let x = g.constant(Tensor::new([1], vec![f64::INFINITY]).unwrap());
        let z = g.constant(Tensor::new([1], vec![0.0]).unwrap());
        assert!(matches!(g.mul(x, z), Err(Error::NonFinite { op: "mul" })));
    }

    #[test]
    fn constants_do_not_record_ops() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::ones([2]));
        let b = g.add(a, a).unwrap();
        assert!(!g.requires_grad(b));
        assert!(matches!(g.nodes[1].op, Op::Leaf));
    }
}
