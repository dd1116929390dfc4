//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles during
//! the forward pass. [`Tape::backward`] consumes the tape and walks it in
//! reverse order, producing [`Gradients`] for every node that depends on a
//! parameter leaf.
//!
//! Each node carries a [`DType`]; forward values and gradient accumulations
//! are rounded to it on every write, so an `F16E` graph behaves like a
//! binary16 graph whose reductions accumulate in wider precision.

mod nn;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

pub use nn::{BatchNormMode, BatchStats, BN_EPS};

use crate::error::{Error, Result};
use crate::tensor::{shape_str, DType, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    Relu(Var),
    Abs(Var),
    /// Reshape and cast both pass the gradient through unchanged.
    Identity(Var),
    Sum(Var),
    WeightedSumLast(Var, Vec<f64>),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNorm(nn::BatchNormSaved),
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Append-only record of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// `(outer, len, inner)` strides for reducing along `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
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

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// A constant input; it never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, false, Op::Leaf)
    }

    /// A trainable leaf whose gradient is reported by `backward`.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, true, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    pub fn dtype(&self, v: Var) -> DType {
        self.node(v).value.dtype()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.node(v).requires_grad)
    }

    fn out_dtype(&self, vars: &[Var]) -> DType {
        vars.iter()
            .map(|&v| self.dtype(v))
            .reduce(DType::promote)
            .unwrap_or(DType::F64)
    }

    fn record(&mut self, shape: &[usize], data: Vec<f64>, dtype: DType, inputs: &[Var], op: Op) -> Var {
        let rg = self.rg(inputs);
        let t = Tensor::new(shape, data, dtype).expect("op produced consistent shape");
        self.push(t, rg, op)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!(
                    "{} vs {}",
                    shape_str(self.shape(a)),
                    shape_str(self.shape(b))
                ),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(op_name, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let dt = self.out_dtype(&[a, b]);
        Ok(self.record(&shape, data, dt, &[a, b], op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data = self.value(a).data().iter().map(|&x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let dt = self.dtype(a);
        self.record(&shape, data, dt, &[a], Op::Scale(a, c))
    }

    /// Elementwise product with a constant array of the same size.
    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Result<Var> {
        if c.len() != self.value(a).len() {
            return Err(Error::shape(
                "mul_const",
                format!("{} constants for {}", c.len(), shape_str(self.shape(a))),
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(&c)
            .map(|(&x, &k)| x * k)
            .collect();
        let shape = self.shape(a).to_vec();
        let dt = self.dtype(a);
        Ok(self.record(&shape, data, dt, &[a], Op::MulConst(a, c)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|&x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        let dt = self.dtype(a);
        self.record(&shape, data, dt, &[a], Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|&x| x.abs()).collect();
        let shape = self.shape(a).to_vec();
        let dt = self.dtype(a);
        self.record(&shape, data, dt, &[a], Op::Abs(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, rg, Op::Identity(a)))
    }

    /// Collapse every axis after the first.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.is_empty() {
            return Err(Error::shape("flatten", "scalar has no batch axis"));
        }
        let n = s[0];
        let rest: usize = s[1..].iter().product();
        self.reshape(a, &[n, rest])
    }

    /// Change precision. The gradient is rounded back to the input's dtype.
    pub fn cast(&mut self, a: Var, dtype: DType) -> Var {
        let t = self.value(a).cast(dtype);
        let rg = self.rg(&[a]);
        self.push(t, rg, Op::Identity(a))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let dt = self.dtype(a);
        self.record(&[], vec![s], dt, &[a], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::EmptyAxis { op: "mean", axis: 0 });
        }
        let s = self.sum(a);
        Ok(self.scale(s, 1.0 / n as f64))
    }

    /// Contract the last axis against fixed weights: `y[r] = sum_k x[r, k] * w[k]`.
    pub fn weighted_sum_last(&mut self, a: Var, weights: Vec<f64>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let k = *shape.last().ok_or(Error::shape("weighted_sum_last", "scalar input"))?;
        if k != weights.len() {
            return Err(Error::shape(
                "weighted_sum_last",
                format!("last axis {k} vs {} weights", weights.len()),
            ));
        }
        if k == 0 {
            return Err(Error::EmptyAxis {
                op: "weighted_sum_last",
                axis: shape.len() - 1,
            });
        }
        let data = self
            .value(a)
            .data()
            .chunks(k)
            .map(|row| row.iter().zip(&weights).map(|(x, w)| x * w).sum())
            .collect();
        let dt = self.dtype(a);
        Ok(self.record(&shape[..shape.len() - 1], data, dt, &[a], Op::WeightedSumLast(a, weights)))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape(
                "narrow",
                format!("axis {axis} range {start}..{} of {}", start + len, shape_str(&shape)),
            ));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let dt = self.dtype(a);
        Ok(self.record(&out_shape, data, dt, &[a], Op::Narrow { x: a, axis, start }))
    }

    /// Softmax along `axis`, stabilized by subtracting the maximum.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("softmax", format!("axis {axis} for {}", shape_str(&shape))));
        }
        if shape[axis] == 0 {
            return Err(Error::EmptyAxis { op: "softmax", axis });
        }
        let data = softmax_along(self.value(a).data(), &shape, axis);
        let dt = self.dtype(a);
        Ok(self.record(&shape, data, dt, &[a], Op::Softmax { x: a, axis }))
    }

    /// Per-row cross entropy `-ln softmax(logits)[target]` over the last axis.
    ///
    /// `targets` has one entry per row; the result drops the last axis (a 1-d
    /// input yields a scalar).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        let k = *shape.last().ok_or(Error::shape("cross_entropy", "scalar logits"))?;
        if k == 0 {
            return Err(Error::EmptyAxis {
                op: "cross_entropy",
                axis: shape.len() - 1,
            });
        }
        let rows = self.value(logits).len() / k;
        if targets.len() != rows {
            return Err(Error::shape(
                "cross_entropy",
                format!("{rows} rows vs {} targets", targets.len()),
            ));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::TargetOutOfRange { target: t, classes: k });
        }
        let x = self.value(logits).data();
        let mut probs = Vec::with_capacity(x.len());
        let mut losses = Vec::with_capacity(rows);
        for (row, &t) in x.chunks(k).zip(targets) {
            let (imax, m) = row
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
            let exps: Vec<f64> = row.iter().map(|&v| libm::exp(v - m)).collect();
            let rest: f64 = exps.iter().enumerate().filter(|&(i, _)| i != imax).map(|(_, e)| e).sum();
            let total = 1.0 + rest;
            // ln(sum exp(x - m)) = log1p(rest) keeps precision for confident rows
            losses.push((m - row[t]) + libm::log1p(rest));
            probs.extend(exps.iter().map(|e| e / total));
        }
        let dt = self.dtype(logits);
        let out_shape = &shape[..shape.len() - 1];
        Ok(self.record(
            out_shape,
            losses,
            dt,
            &[logits],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Run reverse accumulation from the scalar `loss`.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let Tape { nodes } = self;
        let loss_node = &nodes[loss.0];
        if loss_node.value.len() != 1 {
            return Err(Error::NotScalar {
                shape: shape_str(loss_node.value.shape()),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if !loss_node.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backprop(&nodes, node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        // Only nodes that require grad keep a gradient.
        for (g, n) in grads.iter_mut().zip(&nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }
}

pub(crate) fn softmax_along(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, n, inner) = axis_split(shape, axis);
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let m = (0..n).map(|k| x[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for k in 0..n {
                let e = libm::exp(x[idx(k)] - m);
                out[idx(k)] = e;
                s += e;
            }
            for k in 0..n {
                out[idx(k)] /= s;
            }
        }
    }
    out
}

/// Add `contrib` into the gradient slot of `v`, rounding to the node dtype.
fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return;
    }
    let dt = node.value.dtype();
    match &mut grads[v.0] {
        Some(g) => {
            for (a, c) in g.iter_mut().zip(contrib) {
                *a = dt.round(*a + c);
            }
        }
        slot @ None => {
            let mut c = contrib;
            dt.round_slice(&mut c);
            *slot = Some(c);
        }
    }
}

fn backprop(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
    let val = |v: Var| nodes[v.0].value.data();
    let needs = |v: Var| nodes[v.0].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.to_vec());
            accumulate(nodes, grads, *b, g.to_vec());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.to_vec());
            if needs(*b) {
                accumulate(nodes, grads, *b, g.iter().map(|x| -x).collect());
            }
        }
        Op::Mul(a, b) => {
            if needs(*a) {
                let c = g.iter().zip(val(*b)).map(|(g, y)| g * y).collect();
                accumulate(nodes, grads, *a, c);
            }
            if needs(*b) {
                let c = g.iter().zip(val(*a)).map(|(g, x)| g * x).collect();
                accumulate(nodes, grads, *b, c);
            }
        }
        Op::Scale(a, c) => accumulate(nodes, grads, *a, g.iter().map(|x| x * c).collect()),
        Op::MulConst(a, c) => {
            accumulate(nodes, grads, *a, g.iter().zip(c).map(|(g, k)| g * k).collect())
        }
        Op::Relu(a) => {
            let c = g
                .iter()
                .zip(val(*a))
                .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                .collect();
            accumulate(nodes, grads, *a, c);
        }
        Op::Abs(a) => {
            let c = g
                .iter()
                .zip(val(*a))
                .map(|(&g, &x)| {
                    if x > 0.0 {
                        g
                    } else if x < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                })
                .collect();
            accumulate(nodes, grads, *a, c);
        }
        Op::Identity(a) => accumulate(nodes, grads, *a, g.to_vec()),
        Op::Sum(a) => {
            let n = nodes[a.0].value.len();
            accumulate(nodes, grads, *a, vec![g[0]; n]);
        }
        Op::WeightedSumLast(a, w) => {
            let mut c = Vec::with_capacity(g.len() * w.len());
            for &gr in g {
                c.extend(w.iter().map(|k| gr * k));
            }
            accumulate(nodes, grads, *a, c);
        }
        Op::Narrow { x, axis, start } => {
            let shape = nodes[x.0].value.shape();
            let (outer, n, inner) = axis_split(shape, *axis);
            let len = node.value.shape()[*axis];
            let mut c = vec![0.0; nodes[x.0].value.len()];
            for o in 0..outer {
                let dst = (o * n + start) * inner;
                let src = o * len * inner;
                c[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
            }
            accumulate(nodes, grads, *x, c);
        }
        Op::Softmax { x, axis } => {
            let y = node.value.data();
            let (outer, n, inner) = axis_split(node.value.shape(), *axis);
            let mut c = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * n + k) * inner + i;
                    let dot: f64 = (0..n).map(|k| g[idx(k)] * y[idx(k)]).sum();
                    for k in 0..n {
                        c[idx(k)] = y[idx(k)] * (g[idx(k)] - dot);
                    }
                }
            }
            accumulate(nodes, grads, *x, c);
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
        } => {
            let k = probs.len() / targets.len().max(1);
            let mut c = probs.clone();
            for (r, (&t, &gr)) in targets.iter().zip(g).enumerate() {
                let row = &mut c[r * k..(r + 1) * k];
                row[t] -= 1.0;
                for v in row.iter_mut() {
                    *v *= gr;
                }
            }
            accumulate(nodes, grads, *logits, c);
        }
        Op::Dense { x, w, b } => nn::dense_backward(nodes, node, g, grads, *x, *w, *b),
        Op::Conv2d { x, w, b, stride, pad } => {
            nn::conv2d_backward(nodes, g, grads, *x, *w, *b, *stride, *pad, node.value.shape())
        }
        Op::MaxPool2d { x, argmax } => {
            let mut c = vec![0.0; nodes[x.0].value.len()];
            for (&src, &gr) in argmax.iter().zip(g) {
                c[src] += gr;
            }
            accumulate(nodes, grads, *x, c);
        }
        Op::BatchNorm(saved) => nn::batch_norm_backward(nodes, g, grads, saved),
    }
    Ok(())
}
