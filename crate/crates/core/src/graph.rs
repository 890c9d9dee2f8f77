//! Tape of executed operations and the reverse sweep over it.
//!
//! Every operation appends one node whose inputs were recorded earlier, so the
//! tape is already in topological order and the backward pass is a single
//! reverse scan.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom, ConvGrads, PoolGeom, PoolKind};
use crate::param::Parameter;
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, geom: ConvGeom },
    Relu(Var),
    Pool { input: Var, kind: PoolKind, geom: PoolGeom, winners: Vec<usize> },
    Dense { input: Var, weight: Var, bias: Var },
    Reshape(Var),
    Add(Var, Var),
    Scale(Var, T),
    Sum(Var),
    WeightedSum(Vec<(Var, T)>),
    SoftmaxXent { logits: Var, target: Tensor<T>, probs: Tensor<T> },
    MeanAbsDiff(Var, Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation. Leaves are constants or differentiable inputs; all other
/// nodes are produced by the operation methods.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf holding a copy of a parameter's value; differentiable when `trainable`.
    pub fn parameter(&mut self, p: &Parameter<T>, trainable: bool) -> Var {
        self.push(p.value().clone(), Op::Leaf, trainable)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.value(input).shape(), self.value(weight).shape(), stride, pad)?;
        if self.value(bias).shape() != [geom.c_out] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?}, expected [{}]", self.value(bias).shape(), geom.c_out),
            ));
        }
        let out = kernels::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new([geom.batch, geom.c_out, geom.h_out, geom.w_out], out)?;
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(value, Op::Conv2d { input, weight, bias, geom }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn pool2d(&mut self, x: Var, kind: PoolKind, k: usize, stride: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let geom = PoolGeom::new(&shape, k, stride)?;
        let (out, winners) = kernels::pool2d_forward(&geom, kind, self.value(x).data());
        let value = Tensor::new([shape[0], shape[1], geom.h_out, geom.w_out], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Pool { input: x, kind, geom, winners }, rg))
    }

    /// Average over the full spatial extent: `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        if h != w {
            return Err(Error::shape("global_avg_pool", format!("non-square map {h}x{w}")));
        }
        let pooled = self.pool2d(x, PoolKind::Avg, h, h)?;
        self.reshape(pooled, [n, c])
    }

    /// `x·W + b` for `x: [N, F]`, `W: [F, K]`, `b: [K]`.
    pub fn dense(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(weight).shape(), self.value(bias).shape());
        let (&[n, f], &[wf, k]) = (xs, ws) else {
            return Err(Error::shape("dense", format!("input {xs:?} and weight {ws:?} must be rank 2")));
        };
        if wf != f || bs != [k] {
            return Err(Error::shape(
                "dense",
                format!("input {xs:?}, weight {ws:?}, bias {bs:?} do not agree"),
            ));
        }
        let mut out = Vec::with_capacity(n * k);
        for _ in 0..n {
            out.extend_from_slice(self.value(bias).data());
        }
        gemm(
            MatRef::row_major(self.value(x).data(), n, f),
            MatRef::row_major(self.value(weight).data(), f, k),
            T::one(),
            &mut out,
        );
        let rg = self.rg(x) || self.rg(weight) || self.rg(bias);
        Ok(self.push(Tensor::new([n, k], out)?, Op::Dense { input: x, weight, bias }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Flattens everything after the leading axis.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape();
        let n = *shape.first().ok_or_else(|| Error::shape("flatten", "rank-0 tensor"))?;
        let rest = shape[1..].iter().product::<usize>();
        self.reshape(x, [n, rest])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("add", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, factor), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(value, Op::Sum(x), rg)
    }

    /// `Σ w_i · x_i` over scalar nodes, accumulated left to right from zero.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        if terms.is_empty() {
            return Err(Error::invalid("weighted_sum of zero terms"));
        }
        let mut acc = T::zero();
        for &(v, w) in terms {
            acc += w * self.value(v).item()?;
        }
        let rg = terms.iter().any(|&(v, _)| self.rg(v));
        Ok(self.push(Tensor::scalar(acc), Op::WeightedSum(terms.to_vec()), rg))
    }

    /// Batch-mean softmax cross-entropy against one-hot targets `[N, K]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: Tensor<T>) -> Result<Var> {
        let z = self.value(logits);
        let &[n, k] = z.shape() else {
            return Err(Error::shape("softmax_cross_entropy", format!("logits {:?} must be rank 2", z.shape())));
        };
        if target.shape() != z.shape() {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("target {:?} vs logits {:?}", target.shape(), z.shape()),
            ));
        }
        if n == 0 {
            return Err(Error::invalid("softmax_cross_entropy over an empty batch"));
        }
        for (row, t) in target.data().chunks(k).enumerate() {
            let ones = t.iter().filter(|&&v| v == T::one()).count();
            let zeros = t.iter().filter(|&&v| v == T::zero()).count();
            if ones != 1 || zeros != k - 1 {
                return Err(Error::invalid(format!("target row {row} is not one-hot")));
            }
        }
        let mut probs = Vec::with_capacity(n * k);
        let mut total = T::zero();
        for (zr, tr) in z.data().chunks(k).zip(target.data().chunks(k)) {
            let m = zr.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let denom = zr.iter().fold(T::zero(), |a, &b| a + (b - m).exp());
            let lse = m + denom.ln();
            for (&zi, &ti) in zr.iter().zip(tr) {
                probs.push((zi - m).exp() / denom);
                if ti == T::one() {
                    total += lse - zi;
                }
            }
        }
        let loss = total / T::from_usize(n).unwrap();
        let probs = Tensor::new([n, k], probs)?;
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxXent { logits, target, probs }, rg))
    }

    /// `(1/N) Σ |a - b|` with `N` the total element count.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("mean_abs_diff", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        if ta.is_empty() {
            return Err(Error::invalid("mean_abs_diff of empty tensors"));
        }
        let s = ta.data().iter().zip(tb.data()).fold(T::zero(), |acc, (&x, &y)| acc + (x - y).abs());
        let value = Tensor::scalar(s / T::from_usize(ta.len()).unwrap());
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MeanAbsDiff(a, b), rg))
    }

    /// Softmax probabilities saved by a cross-entropy node.
    pub fn softmax_probs(&self, v: Var) -> Option<&Tensor<T>> {
        match &self.nodes[v.0].op {
            Op::SoftmaxXent { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Gradient of the last `backward` loss with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Reverse sweep from a one-element `loss`, filling gradients for every
    /// differentiable node it depends on.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::full(self.value(loss).shape().to_vec(), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(gy) = self.grads[i].take() else { continue };
            self.backprop_node(i, &gy)?;
            self.grads[i] = Some(gy);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, gy: &Tensor<T>) -> Result<()> {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, geom } => {
                let mut take = |v: Var| -> Option<Tensor<T>> {
                    let node = &nodes[v.0];
                    node.requires_grad.then(|| {
                        grads[v.0].take().unwrap_or_else(|| Tensor::zeros(node.value.shape().to_vec()))
                    })
                };
                let mut d_in = take(*input);
                let mut d_w = take(*weight);
                let mut d_b = take(*bias);
                kernels::conv2d_backward(
                    geom,
                    nodes[input.0].value.data(),
                    nodes[weight.0].value.data(),
                    gy.data(),
                    ConvGrads {
                        input: d_in.as_mut().map(Tensor::data_mut),
                        weight: d_w.as_mut().map(Tensor::data_mut),
                        bias: d_b.as_mut().map(Tensor::data_mut),
                    },
                );
                for (v, buf) in [(*input, d_in), (*weight, d_w), (*bias, d_b)] {
                    if buf.is_some() {
                        grads[v.0] = buf;
                    }
                }
            }
            Op::Relu(x) => {
                let out = nodes[i].value.data();
                if let Some(dx) = slot(nodes, grads, *x) {
                    for ((d, &o), &g) in dx.iter_mut().zip(out).zip(gy.data()) {
                        if o > T::zero() {
                            *d += g;
                        }
                    }
                }
            }
            Op::Pool { input, kind, geom, winners } => {
                if let Some(dx) = slot(nodes, grads, *input) {
                    kernels::pool2d_backward(geom, *kind, winners, gy.data(), dx);
                }
            }
            Op::Dense { input, weight, bias } => {
                let (n, f) = {
                    let s = nodes[input.0].value.shape();
                    (s[0], s[1])
                };
                let k = nodes[bias.0].value.len();
                let gmat = MatRef::row_major(gy.data(), n, k);
                if let Some(dx) = slot(nodes, grads, *input) {
                    gemm(gmat, MatRef::transposed(nodes[weight.0].value.data(), f, k), T::one(), dx);
                }
                if let Some(dw) = slot(nodes, grads, *weight) {
                    gemm(MatRef::transposed(nodes[input.0].value.data(), n, f), gmat, T::one(), dw);
                }
                if let Some(db) = slot(nodes, grads, *bias) {
                    for row in gy.data().chunks(k) {
                        for (d, &g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(dx) = slot(nodes, grads, *x) {
                    for (d, &g) in dx.iter_mut().zip(gy.data()) {
                        *d += g;
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(dv) = slot(nodes, grads, v) {
                        for (d, &g) in dv.iter_mut().zip(gy.data()) {
                            *d += g;
                        }
                    }
                }
            }
            Op::Scale(x, f) => {
                let f = *f;
                if let Some(dx) = slot(nodes, grads, *x) {
                    for (d, &g) in dx.iter_mut().zip(gy.data()) {
                        *d += g * f;
                    }
                }
            }
            Op::Sum(x) => {
                let g = gy.item()?;
                if let Some(dx) = slot(nodes, grads, *x) {
                    dx.iter_mut().for_each(|d| *d += g);
                }
            }
            Op::WeightedSum(terms) => {
                let g = gy.item()?;
                for &(v, w) in terms {
                    if let Some(dv) = slot(nodes, grads, v) {
                        dv[0] += g * w;
                    }
                }
            }
            Op::SoftmaxXent { logits, target, probs } => {
                let scale = gy.item()? / T::from_usize(probs.shape()[0]).unwrap();
                if let Some(dz) = slot(nodes, grads, *logits) {
                    for ((d, &p), &t) in dz.iter_mut().zip(probs.data()).zip(target.data()) {
                        *d += (p - t) * scale;
                    }
                }
            }
            Op::MeanAbsDiff(a, b) => {
                let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                let scale = gy.item()? / T::from_usize(va.len()).unwrap();
                let sign = |x: T, y: T| {
                    if x > y {
                        scale
                    } else if x < y {
                        -scale
                    } else {
                        T::zero()
                    }
                };
                if let Some(da) = slot(nodes, grads, *a) {
                    for ((d, &x), &y) in da.iter_mut().zip(va).zip(vb) {
                        *d += sign(x, y);
                    }
                }
                if let Some(db) = slot(nodes, grads, *b) {
                    for ((d, &x), &y) in db.iter_mut().zip(va).zip(vb) {
                        *d -= sign(x, y);
                    }
                }
            }
        }
        Ok(())
    }

    /// Adds each node's gradient into the matching parameter's accumulator.
    pub fn accumulate_into(&self, vars: &[Var], params: &mut [Parameter<T>]) -> Result<()> {
        if vars.len() != params.len() {
            return Err(Error::invalid(format!(
                "{} bound vars for {} parameters",
                vars.len(),
                params.len()
            )));
        }
        for (&v, p) in vars.iter().zip(params.iter_mut()) {
            if let Some(g) = self.grad(v) {
                p.accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}

/// Gradient buffer of `v`, created on first use; `None` for non-differentiable nodes.
fn slot<'a, T: Scalar>(nodes: &[Node<T>], grads: &'a mut [Option<Tensor<T>>], v: Var) -> Option<&'a mut [T]> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let shape = node.value.shape().to_vec();
    Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(shape)).data_mut())
}
