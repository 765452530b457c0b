//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] owns every intermediate value. Operations append nodes whose
//! parents always have smaller indices, so the tape order is a topological
//! order and the backward pass is a single reverse sweep.

use super::shape;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(BinaryKind, Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Shift(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sum(Var),
    MatMul(Var, Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Narrow { x: Var, axis: usize, start: usize },
    LogSoftmax(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
    check_finite: bool,
    div_guard: f64,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, failing if `v` did not require gradients.
    pub fn wrt(&self, v: Var) -> Result<&Tensor> {
        self.get(v).ok_or_else(|| {
            Error::InvalidArgument(format!("no gradient recorded for node {}", v.0))
        })
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            consumed: false,
            check_finite: false,
            div_guard: 0.0,
        }
    }

    /// Fail any operation whose result contains NaN or infinity.
    pub fn with_finite_check(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    /// Divisors with magnitude below `guard` (or exactly zero) are rejected.
    pub fn with_div_guard(mut self, guard: f64) -> Self {
        self.div_guard = guard;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
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

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var], name: &'static str) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out_shape = shape::broadcast_shape(av.shape(), bv.shape())?;
        if kind == BinaryKind::Div {
            let guard = self.div_guard;
            if let Some(&v) = bv.data().iter().find(|v| **v == 0.0 || v.abs() < guard) {
                return Err(Error::DivisionDomain { value: v, guard });
            }
        }
        let ae = shape::expand(av.data(), av.shape(), &out_shape);
        let be = shape::expand(bv.data(), bv.shape(), &out_shape);
        let f: fn(f64, f64) -> f64 = match kind {
            BinaryKind::Add => |x, y| x + y,
            BinaryKind::Sub => |x, y| x - y,
            BinaryKind::Mul => |x, y| x * y,
            BinaryKind::Div => |x, y| x / y,
        };
        let data = ae.iter().zip(&be).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(out_shape, data)?;
        self.push(value, Op::Binary(kind, a, b), &[a, b], "binary")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    fn unary(&mut self, x: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var> {
        let value = self.value(x).map(f);
        self.push(value, op, &[x], name)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Neg(x), "neg", |v| -v)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, Op::Scale(x, c), "scale", |v| v * c)
    }

    pub fn shift(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, Op::Shift(x), "shift", |v| v + c)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Exp(x), "exp", f64::exp)
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Ln(x), "ln", f64::ln)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sqrt(x), "sqrt", f64::sqrt)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x), "relu", |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary(x, Op::LeakyRelu(x, slope), "leaky_relu", |v| {
            if v > 0.0 {
                v
            } else {
                slope * v
            }
        })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Tanh(x), "tanh", f64::tanh)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.mul(x, x)
    }

    /// Sum over `axes`, keeping them as extent-1 axes.
    pub fn sum(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let axes = shape::check_axes(axes, xv.rank())?;
        let out_shape = shape::reduced_shape(xv.shape(), &axes);
        let data = shape::sum_to(xv.data(), xv.shape(), &out_shape);
        let value = Tensor::new(out_shape, data)?;
        self.push(value, Op::Sum(x), &[x], "sum")
    }

    pub fn mean(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let axes = shape::check_axes(axes, self.value(x).rank())?;
        let count: usize = axes.iter().map(|&a| self.shape(x)[a]).product();
        let s = self.sum(x, &axes)?;
        self.scale(s, 1.0 / count as f64)
    }

    /// Sum of every element, as a shape-`[1]` tensor.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.value(x).rank()).collect();
        let s = self.sum(x, &axes)?;
        self.reshape(s, vec![1])
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let s = self.sum_all(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Mean and biased variance over `axes`, reduced axes kept as extent 1.
    pub fn moments(&mut self, x: Var, axes: &[usize]) -> Result<(Var, Var)> {
        let mean = self.mean(x, axes)?;
        let centered = self.sub(x, mean)?;
        let sq = self.square(centered)?;
        let var = self.mean(sq, axes)?;
        Ok((mean, var))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let value = matmul(av, bv)?;
        self.push(value, Op::MatMul(a, b), &[a, b], "matmul")
    }

    /// `x · w + b` for `x: (N, D_in)`, `w: (D_in, D_out)`, `b: (D_out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let d_out = self.shape(w).get(1).copied().unwrap_or(0);
        if self.shape(b) != [d_out] {
            return Err(Error::shape(format!(
                "bias {:?} for output width {d_out}",
                self.shape(b)
            )));
        }
        let xw = self.matmul(x, w)?;
        let b_row = self.reshape(b, vec![1, d_out])?;
        self.add(xw, b_row)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        self.push(value, Op::Reshape(x), &[x], "reshape")
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        shape::check_permutation(perm, xv.rank())?;
        let (data, out_shape) = shape::permute(xv.data(), xv.shape(), perm);
        let value = Tensor::new(out_shape, data)?;
        self.push(value, Op::Permute(x, perm.to_vec()), &[x], "permute")
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let rank = xv.rank();
        if axis >= rank {
            return Err(Error::AxisOutOfRange { axis, rank });
        }
        let extent = xv.shape()[axis];
        if len == 0 || start + len > extent {
            return Err(Error::IndexOutOfRange {
                index: start + len,
                len: extent,
            });
        }
        let mut out_shape = xv.shape().to_vec();
        out_shape[axis] = len;
        let value = Tensor::from_fn(out_shape, |idx| {
            let mut src = idx.to_vec();
            src[axis] += start;
            xv.data()[shape::offset(&src, &shape::strides(xv.shape()))]
        })?;
        self.push(value, Op::Narrow { x, axis, start }, &[x], "narrow")
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let width = *xv.shape().last().expect("rank >= 1");
        let mut data = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(width) {
            let lse = log_sum_exp(row);
            data.extend(row.iter().map(|v| v - lse));
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(value, Op::LogSoftmax(x), &[x], "log_softmax")
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let ls = self.log_softmax(x)?;
        self.exp(ls)
    }

    /// Allows another backward pass over this graph.
    pub fn reset(&mut self) {
        self.consumed = false;
    }

    /// Reverse sweep from a one-element `loss`.
    ///
    /// Every leaf created with `requires_grad` receives a gradient of its own
    /// shape, zero when it does not influence the loss.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::AlreadyConsumed);
        }
        let n = self.value(loss).numel();
        if n != 1 {
            return Err(Error::NonScalarLoss(n));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(self.shape(loss).to_vec())?);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (parent, pg) in self.local_grads(i, &g)? {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                let slot = &mut grads[parent.0];
                *slot = Some(match slot.take() {
                    Some(acc) => acc.zip_with(&pg, |a, b| a + b)?,
                    None => pg,
                });
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }

        for (node, slot) in self.nodes.iter().zip(grads.iter_mut()) {
            match node.op {
                Op::Leaf if node.requires_grad => {
                    if slot.is_none() {
                        *slot = Some(Tensor::zeros(node.value.shape().to_vec())?);
                    }
                }
                _ => *slot = None,
            }
        }
        Ok(Gradients { grads })
    }

    /// Vector-Jacobian products of node `i` for upstream gradient `g`.
    fn local_grads(&self, i: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[i];
        let out = &node.value;
        let gd = g.data();
        let same = |v: Var, data: Vec<f64>| -> Result<(Var, Tensor)> {
            Ok((v, Tensor::new(self.shape(v).to_vec(), data)?))
        };
        let elementwise = |x: Var, f: &dyn Fn(usize) -> f64| -> Result<Vec<(Var, Tensor)>> {
            let data = gd.iter().enumerate().map(|(k, &gv)| gv * f(k)).collect();
            Ok(vec![same(x, data)?])
        };
        match &node.op {
            Op::Leaf => Ok(vec![]),
            Op::Binary(kind, a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let os = out.shape();
                let reduce_a = |d: Vec<f64>| same(*a, shape::sum_to(&d, os, av.shape()));
                let reduce_b = |d: Vec<f64>| same(*b, shape::sum_to(&d, os, bv.shape()));
                match kind {
                    BinaryKind::Add => Ok(vec![reduce_a(gd.to_vec())?, reduce_b(gd.to_vec())?]),
                    BinaryKind::Sub => Ok(vec![
                        reduce_a(gd.to_vec())?,
                        reduce_b(gd.iter().map(|v| -v).collect())?,
                    ]),
                    BinaryKind::Mul => {
                        let ae = shape::expand(av.data(), av.shape(), os);
                        let be = shape::expand(bv.data(), bv.shape(), os);
                        Ok(vec![
                            reduce_a(gd.iter().zip(&be).map(|(g, b)| g * b).collect())?,
                            reduce_b(gd.iter().zip(&ae).map(|(g, a)| g * a).collect())?,
                        ])
                    }
                    BinaryKind::Div => {
                        let ae = shape::expand(av.data(), av.shape(), os);
                        let be = shape::expand(bv.data(), bv.shape(), os);
                        let ga = gd.iter().zip(&be).map(|(g, b)| g / b).collect();
                        let gb = gd
                            .iter()
                            .zip(ae.iter().zip(&be))
                            .map(|(g, (a, b))| -g * a / (b * b))
                            .collect();
                        Ok(vec![reduce_a(ga)?, reduce_b(gb)?])
                    }
                }
            }
            Op::Neg(x) => elementwise(*x, &|_| -1.0),
            Op::Scale(x, c) => elementwise(*x, &|_| *c),
            Op::Shift(x) => elementwise(*x, &|_| 1.0),
            Op::Exp(x) => elementwise(*x, &|k| out.data()[k]),
            Op::Ln(x) => {
                let xv = self.value(*x).data();
                elementwise(*x, &|k| 1.0 / xv[k])
            }
            Op::Sqrt(x) => elementwise(*x, &|k| 0.5 / out.data()[k]),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                elementwise(*x, &|k| if xv[k] > 0.0 { 1.0 } else { 0.0 })
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x).data();
                elementwise(*x, &|k| if xv[k] > 0.0 { 1.0 } else { *slope })
            }
            Op::Tanh(x) => elementwise(*x, &|k| 1.0 - out.data()[k] * out.data()[k]),
            Op::Sum(x) => {
                let xs = self.shape(*x);
                Ok(vec![same(*x, shape::expand(gd, out.shape(), xs))?])
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = matmul(g, &transpose(bv))?;
                let gb = matmul(&transpose(av), g)?;
                Ok(vec![(*a, ga), (*b, gb)])
            }
            Op::Reshape(x) => Ok(vec![same(*x, gd.to_vec())?]),
            Op::Permute(x, perm) => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let (data, _) = shape::permute(gd, g.shape(), &inverse);
                Ok(vec![same(*x, data)?])
            }
            Op::Narrow { x, axis, start } => {
                let xs = self.shape(*x).to_vec();
                let strides = shape::strides(&xs);
                let mut data = vec![0.0; xs.iter().product()];
                let mut idx = vec![0; g.rank()];
                for &gv in gd {
                    let mut src = idx.clone();
                    src[*axis] += start;
                    data[shape::offset(&src, &strides)] += gv;
                    shape::advance(&mut idx, g.shape());
                }
                Ok(vec![same(*x, data)?])
            }
            Op::LogSoftmax(x) => {
                let width = *out.shape().last().expect("rank >= 1");
                let mut data = Vec::with_capacity(gd.len());
                for (grow, orow) in gd.chunks(width).zip(out.data().chunks(width)) {
                    let total: f64 = grow.iter().sum();
                    data.extend(grow.iter().zip(orow).map(|(g, o)| g - o.exp() * total));
                }
                Ok(vec![same(*x, data)?])
            }
        }
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (&[n, k], &[k2, m]) = (a.shape(), b.shape()) else {
        return Err(Error::shape(format!(
            "matmul needs 2-D operands, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    };
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul inner extents {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = ad[i * k + p];
            for (o, &bv) in row.iter_mut().zip(&bd[p * m..(p + 1) * m]) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(vec![n, m], out)
}

fn transpose(t: &Tensor) -> Tensor {
    let (data, shape) = shape::permute(t.data(), t.shape(), &[1, 0]);
    Tensor::new(shape, data).expect("transpose preserves element count")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn add_vectors() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2], &[1.0, 2.0]));
        let b = g.constant(t(&[2], &[3.0, 4.0]));
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn broadcast_mul_scales_rows_independently() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = g.constant(t(&[1, 3], &[10.0, 100.0, 1000.0]));
        let c = g.mul(a, b).unwrap();
        assert_eq!(g.shape(c), &[2, 3]);
        assert_eq!(
            g.value(c).data(),
            &[10.0, 200.0, 3000.0, 40.0, 500.0, 6000.0]
        );
    }

    #[test]
    fn mismatched_extents_are_rejected() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 3], &[0.0; 6]));
        let b = g.constant(t(&[2, 2], &[0.0; 4]));
        assert!(matches!(g.add(a, b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn division_by_exact_zero_is_trapped() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2], &[1.0, 1.0]));
        let b = g.constant(t(&[2], &[1.0, 0.0]));
        assert!(matches!(g.div(a, b), Err(Error::DivisionDomain { .. })));

        let mut g = Graph::new().with_div_guard(1e-3);
        let a = g.constant(t(&[1], &[1.0]));
        let b = g.constant(t(&[1], &[1e-4]));
        assert!(matches!(g.div(a, b), Err(Error::DivisionDomain { .. })));
    }

    #[test]
    fn sum_gradient_is_ones_and_square_gradient_is_two_x() {
        let x0 = t(&[2, 2], &[1.0, -2.0, 3.0, 0.5]);
        let mut g = Graph::new();
        let x = g.param(x0.clone());
        let s = g.sum_all(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0; 4]);

        let mut g = Graph::new();
        let x = g.param(x0.clone());
        let sq = g.square(x).unwrap();
        let s = g.sum_all(sq).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &x0.map(|v| 2.0 * v));
    }

    #[test]
    fn reused_tensor_accumulates() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1.0, 2.0, 3.0]));
        let y = g.add(x, x).unwrap();
        let s = g.sum_all(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[2.0; 3]);
    }

    #[test]
    fn backward_twice_requires_reset() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let y = g.square(x).unwrap();
        g.backward(y).unwrap();
        assert!(matches!(g.backward(y), Err(Error::AlreadyConsumed)));
        g.reset();
        assert_eq!(g.backward(y).unwrap().wrt(x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(2))));
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let unused = g.param(t(&[3], &[1.0, 2.0, 3.0]));
        let s = g.sum_all(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(unused).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn moments_of_small_matrix() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2], &[1.0, 3.0, 5.0, 7.0]));
        let (m, v) = g.moments(x, &[0]).unwrap();
        assert_eq!(g.value(m).data(), &[3.0, 5.0]);
        assert_eq!(g.value(v).data(), &[4.0, 4.0]);
        assert_eq!(g.shape(m), &[1, 2]);
    }

    #[test]
    fn moments_axis_errors() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2], &[1.0; 4]));
        assert!(matches!(g.moments(x, &[]), Err(Error::EmptyAxes)));
        assert!(matches!(
            g.moments(x, &[2]),
            Err(Error::AxisOutOfRange { axis: 2, rank: 2 })
        ));
    }

    #[test]
    fn linear_identity_and_scalar() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let w = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(t(&[2], &[0.0, 0.0]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let x = g.constant(t(&[1, 1], &[2.0]));
        let w = g.constant(t(&[1, 1], &[3.0]));
        let b = g.constant(t(&[1], &[1.0]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[7.0]);

        let bad = g.constant(t(&[3, 1], &[0.0; 3]));
        assert!(g.linear(x, bad, b).is_err());
    }

    #[test]
    fn finite_check_catches_nan() {
        let mut g = Graph::new().with_finite_check(true);
        let x = g.constant(t(&[1], &[-1.0]));
        assert!(matches!(g.sqrt(x), Err(Error::NonFinite("sqrt"))));
    }

    #[test]
    fn log_softmax_rows_normalize() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 0.0, 0.0, 1000.0]));
        let p = g.softmax(x).unwrap();
        for row in g.value(p).data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn narrow_and_permute_shapes() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_fn(vec![2, 3, 4], |i| (i[0] * 12 + i[1] * 4 + i[2]) as f64).unwrap());
        let n = g.narrow(x, 1, 1, 2).unwrap();
        assert_eq!(g.shape(n), &[2, 2, 4]);
        assert_eq!(g.value(n).get(&[1, 0, 3]).unwrap(), 19.0);
        let p = g.permute(n, &[2, 0, 1]).unwrap();
        assert_eq!(g.shape(p), &[4, 2, 2]);
        let s = g.sum_all(p).unwrap();
        let grads = g.backward(s).unwrap();
        let gx = grads.wrt(x).unwrap();
        assert_eq!(gx.get(&[0, 0, 0]).unwrap(), 0.0);
        assert_eq!(gx.get(&[0, 1, 0]).unwrap(), 1.0);
        assert_eq!(gx.get(&[1, 2, 3]).unwrap(), 1.0);
    }
}
