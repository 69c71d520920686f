//! Reverse-mode differentiation over a recorded graph of tensor primitives.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and the graph cannot contain cycles. `backward` walks
//! it from the root towards the leaves once.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::{axis_extents, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node inside a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Differentiable primitive operations.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive<S> {
    MatMul,
    Add,
    Sub,
    MulElementwise,
    ScaleByConstant(S),
    Relu,
    Sigmoid,
    Log,
    Exp,
    SoftmaxOverAxis(usize),
    ConcatOverAxis(usize),
    SumOverAxis(usize),
    MeanOverAxis(usize),
    Transpose2d,
    /// Forward value of the first input, gradient routed to the second.
    PassThrough,
    /// Elementwise clamp to `[lo, hi]`; gradient flows only inside the range.
    Clamp(S, S),
}

impl<S> Primitive<S> {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::MulElementwise => "mul_elementwise",
            Primitive::ScaleByConstant(_) => "scale_by_constant",
            Primitive::Relu => "relu",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Log => "log",
            Primitive::Exp => "exp",
            Primitive::SoftmaxOverAxis(_) => "softmax_over_axis",
            Primitive::ConcatOverAxis(_) => "concat_over_axis",
            Primitive::SumOverAxis(_) => "sum_over_axis",
            Primitive::MeanOverAxis(_) => "mean_over_axis",
            Primitive::Transpose2d => "transpose_2d",
            Primitive::PassThrough => "pass_through",
            Primitive::Clamp(..) => "clamp",
        }
    }
}

/// One recorded value together with how it was produced.
#[derive(Debug, Clone)]
pub struct TensorNode<S> {
    value: Tensor<S>,
    grad: Option<Vec<S>>,
    op: Option<Primitive<S>>,
    parents: Vec<Var>,
    requires_grad: bool,
}

impl<S: Scalar> TensorNode<S> {
    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn values(&self) -> &[S] {
        self.value.data()
    }

    pub fn value(&self) -> &Tensor<S> {
        &self.value
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    pub fn primitive(&self) -> Option<&Primitive<S>> {
        self.op.as_ref()
    }

    pub fn parents(&self) -> &[Var] {
        &self.parents
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

/// Arena of [`TensorNode`]s for one forward/backward pass.
#[derive(Debug, Clone, Default)]
pub struct Graph<S> {
    nodes: Vec<TensorNode<S>>,
    params: BTreeMap<String, Var>,
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.nodes.push(TensorNode {
            value,
            grad: None,
            op: None,
            parents: Vec::new(),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push_leaf(value, false)
    }

    /// Differentiable leaf that is not a named parameter.
    pub fn input(&mut self, value: Tensor<S>) -> Var {
        self.push_leaf(value, true)
    }

    /// Binds parameter `name` from `store`. Repeated binds return the same node.
    pub fn param(&mut self, store: &ParamStore<S>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?
            .clone();
        let v = self.push_leaf(value, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn node(&self, v: Var) -> &TensorNode<S> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Parameter names bound in this graph with their nodes.
    pub fn bound_params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.eval(Primitive::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.eval(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.eval(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.eval(Primitive::MulElementwise, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: S) -> Result<Var> {
        self.eval(Primitive::ScaleByConstant(c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.eval(Primitive::Relu, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.eval(Primitive::Sigmoid, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.eval(Primitive::Log, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.eval(Primitive::Exp, &[a])
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.eval(Primitive::SoftmaxOverAxis(axis), &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        self.eval(Primitive::ConcatOverAxis(axis), parts)
    }

    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.eval(Primitive::SumOverAxis(axis), &[a])
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.eval(Primitive::MeanOverAxis(axis), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.eval(Primitive::Transpose2d, &[a])
    }

    pub fn pass_through(&mut self, hard: Var, soft: Var) -> Result<Var> {
        self.eval(Primitive::PassThrough, &[hard, soft])
    }

    pub fn clamp(&mut self, a: Var, lo: S, hi: S) -> Result<Var> {
        self.eval(Primitive::Clamp(lo, hi), &[a])
    }

    /// Sums every element down to a scalar of shape `[]`.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let mut v = a;
        while !self.shape(v).is_empty() {
            v = self.sum(v, 0)?;
        }
        Ok(v)
    }

    /// Evaluates `prim` on `inputs` and records the resulting node.
    pub fn eval(&mut self, prim: Primitive<S>, inputs: &[Var]) -> Result<Var> {
        let arity = match prim {
            Primitive::MatMul
            | Primitive::Add
            | Primitive::Sub
            | Primitive::MulElementwise
            | Primitive::PassThrough => Some(2),
            Primitive::ConcatOverAxis(_) => None,
            _ => Some(1),
        };
        if let Some(n) = arity {
            if inputs.len() != n {
                return Err(Error::Contract(format!(
                    "{} takes {n} inputs, got {}",
                    prim.name(),
                    inputs.len()
                )));
            }
        } else if inputs.is_empty() {
            return Err(Error::Contract(format!("{} needs at least one input", prim.name())));
        }
        let value = self.forward(&prim, inputs)?;
        let requires_grad = match prim {
            Primitive::PassThrough => self.nodes[inputs[1].0].requires_grad,
            _ => inputs.iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(TensorNode {
            value,
            grad: None,
            op: Some(prim),
            parents: inputs.to_vec(),
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn forward(&self, prim: &Primitive<S>, inputs: &[Var]) -> Result<Tensor<S>> {
        let x = &self.nodes[inputs[0].0].value;
        let name = prim.name();
        match *prim {
            Primitive::MatMul => {
                let b = &self.nodes[inputs[1].0].value;
                let (m, k, n) = matmul_dims(x.shape(), b.shape())
                    .ok_or_else(|| Error::shape(name, x.shape(), b.shape()))?;
                let mut out = vec![S::zero(); m * n];
                gemm_acc(x.data(), b.data(), &mut out, m, k, n);
                Tensor::new(vec![m, n], out)
            }
            Primitive::Add | Primitive::Sub | Primitive::MulElementwise => {
                let b = &self.nodes[inputs[1].0].value;
                if x.shape() != b.shape() {
                    return Err(Error::shape(name, x.shape(), b.shape()));
                }
                let f: fn(S, S) -> S = match prim {
                    Primitive::Add => |a, b| a + b,
                    Primitive::Sub => |a, b| a - b,
                    _ => |a, b| a * b,
                };
                let data = x.data().iter().zip(b.data()).map(|(&a, &b)| f(a, b)).collect();
                Tensor::new(x.shape().to_vec(), data)
            }
            Primitive::ScaleByConstant(c) => map(x, |a| a * c),
            Primitive::Relu => map(x, |a| if a > S::zero() { a } else { S::zero() }),
            Primitive::Sigmoid => map(x, sigmoid),
            Primitive::Log => {
                if let Some(bad) = x.data().iter().find(|&&a| !(a > S::zero())) {
                    return Err(Error::Domain {
                        op: "log",
                        detail: format!("non-positive input {bad}"),
                    });
                }
                map(x, |a| a.ln())
            }
            Primitive::Exp => map(x, |a| a.exp()),
            Primitive::SoftmaxOverAxis(axis) => {
                check_axis(name, x.shape(), axis)?;
                let mut out = x.data().to_vec();
                let (outer, len, inner) = axis_extents(x.shape(), axis);
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let mut max = S::neg_infinity();
                        for k in 0..len {
                            max = max.max(out[idx(k)]);
                        }
                        let mut total = S::zero();
                        for k in 0..len {
                            let e = (out[idx(k)] - max).exp();
                            out[idx(k)] = e;
                            total = total + e;
                        }
                        for k in 0..len {
                            out[idx(k)] = out[idx(k)] / total;
                        }
                    }
                }
                Tensor::new(x.shape().to_vec(), out)
            }
            Primitive::ConcatOverAxis(axis) => {
                let rank = x.shape().len();
                check_axis(name, x.shape(), axis)?;
                let mut out_shape = x.shape().to_vec();
                out_shape[axis] = 0;
                for v in inputs {
                    let s = self.nodes[v.0].value.shape();
                    let conform = s.len() == rank
                        && s.iter().enumerate().all(|(d, &n)| d == axis || n == x.shape()[d]);
                    if !conform {
                        return Err(Error::shape(name, x.shape(), s));
                    }
                    out_shape[axis] += s[axis];
                }
                let (outer, _, inner) = axis_extents(&out_shape, axis);
                let mut out = Vec::with_capacity(out_shape.iter().product());
                for o in 0..outer {
                    for v in inputs {
                        let t = &self.nodes[v.0].value;
                        let chunk = t.shape()[axis] * inner;
                        out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
                    }
                }
                Tensor::new(out_shape, out)
            }
            Primitive::SumOverAxis(axis) | Primitive::MeanOverAxis(axis) => {
                check_axis(name, x.shape(), axis)?;
                let (outer, len, inner) = axis_extents(x.shape(), axis);
                let mut out = vec![S::zero(); outer * inner];
                for o in 0..outer {
                    for k in 0..len {
                        for i in 0..inner {
                            out[o * inner + i] = out[o * inner + i] + x.data()[(o * len + k) * inner + i];
                        }
                    }
                }
                if matches!(prim, Primitive::MeanOverAxis(_)) {
                    let n = S::of(len as f64);
                    out.iter_mut().for_each(|a| *a = *a / n);
                }
                let mut shape = x.shape().to_vec();
                shape.remove(axis);
                Tensor::new(shape, out)
            }
            Primitive::Transpose2d => x.transposed(),
            Primitive::PassThrough => {
                let soft = &self.nodes[inputs[1].0].value;
                if x.shape() != soft.shape() {
                    return Err(Error::shape(name, x.shape(), soft.shape()));
                }
                Ok(x.clone())
            }
            Primitive::Clamp(lo, hi) => map(x, |a| a.max(lo).min(hi)),
        }
    }

    /// Reverse pass from a scalar `root`. Gradients of earlier passes are discarded.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_node = &self.nodes[root.0];
        if root_node.value.numel() != 1 || root_node.value.shape().len() > 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                root_node.value.shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[root.0].grad = Some(vec![S::one()]);
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad || self.nodes[idx].op.is_none() {
                continue;
            }
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            self.propagate(idx, &g);
            self.nodes[idx].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contribution: Vec<S>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => g.iter_mut().zip(contribution).for_each(|(a, b)| *a = *a + b),
            None => node.grad = Some(contribution),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&mut self, idx: usize, g: &[S]) {
        let parents = self.nodes[idx].parents.clone();
        let op = self.nodes[idx].op.clone().expect("interior node");
        let x = parents[0];
        match op {
            Primitive::MatMul => {
                let b = parents[1];
                let (m, k) = (self.shape(x)[0], self.shape(x)[1]);
                let n = self.shape(b)[1];
                if self.wants(x) {
                    let bv = self.value(b).data();
                    let mut da = vec![S::zero(); m * k];
                    for i in 0..m {
                        for kk in 0..k {
                            let mut acc = S::zero();
                            for j in 0..n {
                                acc = acc + g[i * n + j] * bv[kk * n + j];
                            }
                            da[i * k + kk] = acc;
                        }
                    }
                    self.accumulate(x, da);
                }
                if self.wants(b) {
                    let av = self.value(x).data();
                    let mut db = vec![S::zero(); k * n];
                    for i in 0..m {
                        for kk in 0..k {
                            let a = av[i * k + kk];
                            if a == S::zero() {
                                continue;
                            }
                            let row = &mut db[kk * n..(kk + 1) * n];
                            for (d, &gv) in row.iter_mut().zip(&g[i * n..(i + 1) * n]) {
                                *d = *d + a * gv;
                            }
                        }
                    }
                    self.accumulate(b, db);
                }
            }
            Primitive::Add => {
                self.accumulate(x, g.to_vec());
                self.accumulate(parents[1], g.to_vec());
            }
            Primitive::Sub => {
                self.accumulate(x, g.to_vec());
                self.accumulate(parents[1], g.iter().map(|&v| -v).collect());
            }
            Primitive::MulElementwise => {
                let b = parents[1];
                if self.wants(x) {
                    let d = g.iter().zip(self.value(b).data()).map(|(&g, &b)| g * b).collect();
                    self.accumulate(x, d);
                }
                if self.wants(b) {
                    let d = g.iter().zip(self.value(x).data()).map(|(&g, &a)| g * a).collect();
                    self.accumulate(b, d);
                }
            }
            Primitive::ScaleByConstant(c) => self.accumulate(x, g.iter().map(|&v| v * c).collect()),
            Primitive::Relu => {
                let d = g
                    .iter()
                    .zip(self.value(x).data())
                    .map(|(&g, &a)| if a > S::zero() { g } else { S::zero() })
                    .collect();
                self.accumulate(x, d);
            }
            Primitive::Sigmoid => {
                let y = self.nodes[idx].value.data();
                let d = g.iter().zip(y).map(|(&g, &y)| g * y * (S::one() - y)).collect();
                self.accumulate(x, d);
            }
            Primitive::Log => {
                let d = g.iter().zip(self.value(x).data()).map(|(&g, &a)| g / a).collect();
                self.accumulate(x, d);
            }
            Primitive::Exp => {
                let y = self.nodes[idx].value.data();
                let d = g.iter().zip(y).map(|(&g, &y)| g * y).collect();
                self.accumulate(x, d);
            }
            Primitive::SoftmaxOverAxis(axis) => {
                let y = self.nodes[idx].value.data();
                let (outer, len, inner) = axis_extents(self.nodes[idx].value.shape(), axis);
                let mut d = vec![S::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + i;
                        let mut dot = S::zero();
                        for k in 0..len {
                            dot = dot + g[at(k)] * y[at(k)];
                        }
                        for k in 0..len {
                            d[at(k)] = y[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
                self.accumulate(x, d);
            }
            Primitive::ConcatOverAxis(axis) => {
                let out_shape = self.nodes[idx].value.shape().to_vec();
                let (outer, _, inner) = axis_extents(&out_shape, axis);
                let widths: Vec<usize> = parents.iter().map(|v| self.shape(*v)[axis] * inner).collect();
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (p, &w) in parents.iter().zip(&widths) {
                    if self.wants(*p) {
                        let mut d = Vec::with_capacity(outer * w);
                        for o in 0..outer {
                            d.extend_from_slice(&g[o * total + offset..o * total + offset + w]);
                        }
                        self.accumulate(*p, d);
                    }
                    offset += w;
                }
            }
            Primitive::SumOverAxis(axis) | Primitive::MeanOverAxis(axis) => {
                let (outer, len, inner) = axis_extents(self.shape(x), axis);
                let factor = if matches!(op, Primitive::MeanOverAxis(_)) {
                    S::one() / S::of(len as f64)
                } else {
                    S::one()
                };
                let mut d = vec![S::zero(); outer * len * inner];
                for o in 0..outer {
                    for k in 0..len {
                        for i in 0..inner {
                            d[(o * len + k) * inner + i] = g[o * inner + i] * factor;
                        }
                    }
                }
                self.accumulate(x, d);
            }
            Primitive::Transpose2d => {
                let out_shape = self.nodes[idx].value.shape().to_vec();
                let gt = Tensor::new(out_shape, g.to_vec())
                    .and_then(|t| t.transposed())
                    .expect("transpose of a recorded 2-D node");
                self.accumulate(x, gt.into_data());
            }
            Primitive::PassThrough => self.accumulate(parents[1], g.to_vec()),
            Primitive::Clamp(lo, hi) => {
                let d = g
                    .iter()
                    .zip(self.value(x).data())
                    .map(|(&g, &a)| if a >= lo && a <= hi { g } else { S::zero() })
                    .collect();
                self.accumulate(x, d);
            }
        }
    }

    /// Gradient of every bound parameter after [`Graph::backward`]; parameters the
    /// root does not reach get zeros.
    pub fn param_grads(&self) -> BTreeMap<String, Vec<S>> {
        self.params
            .iter()
            .map(|(name, &v)| {
                let node = &self.nodes[v.0];
                let g = node
                    .grad
                    .clone()
                    .unwrap_or_else(|| vec![S::zero(); node.value.numel()]);
                (name.clone(), g)
            })
            .collect()
    }
}

/// Runs the reverse pass and writes `∂root/∂θ` into `store` for every parameter;
/// parameters not reached from `root` end up with zero gradient.
pub fn backward<S: Scalar>(graph: &mut Graph<S>, root: Var, store: &mut ParamStore<S>) -> Result<()> {
    graph.backward(root)?;
    store.zero_grads();
    for (name, grad) in graph.param_grads() {
        if let Some(p) = store.param_mut(&name) {
            p.grad.copy_from_slice(&grad);
        }
    }
    Ok(())
}

#[inline]
pub(crate) fn sigmoid<S: Scalar>(a: S) -> S {
    if a >= S::zero() {
        S::one() / (S::one() + (-a).exp())
    } else {
        let e = a.exp();
        e / (S::one() + e)
    }
}

fn map<S: Scalar>(x: &Tensor<S>, f: impl Fn(S) -> S) -> Result<Tensor<S>> {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&a| f(a)).collect())
}

fn check_axis(name: &str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::shape(format!("{name}(axis={axis})"), shape, &[]));
    }
    Ok(())
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Option<(usize, usize, usize)> {
    match (a, b) {
        ([m, k], [k2, n]) if k == k2 => Some((*m, *k, *n)),
        _ => None,
    }
}

/// `out += a · b` for row-major `a: m×k`, `b: k×n`. Each output entry
/// accumulates over `k` in ascending order; zero entries of `a` are skipped.
fn gemm_acc<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == S::zero() {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[kk * n..(kk + 1) * n]) {
                *o = *o + av * bv;
            }
        }
    }
}
