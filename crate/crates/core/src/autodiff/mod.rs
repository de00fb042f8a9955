//! Reverse-mode automatic differentiation over a dynamically built tape.
//!
//! A [`Tape`] records every operation as it is executed. Values are small
//! dense row-major matrices; a [`Var`] is a handle to one recorded node.
//! Calling [`Var::backward`] on a scalar walks the tape once in reverse and
//! returns a [`Gradients`] table indexed by node.
//!
//! Broadcasting is deliberately limited: elementwise binary ops accept either
//! equal shapes or a `1×1` operand on one side. Everything else must match.
//!
//! ```
//! use ngarch::autodiff::Tape;
//!
//! let tape = Tape::new();
//! let x = tape.scalar(3.0);
//! let y = x.square();
//! let grads = y.backward().unwrap();
//! assert_eq!(grads.wrt(x), vec![6.0]);
//! ```

pub mod special;

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub const SCALAR: Shape = Shape { rows: 1, cols: 1 };

    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub fn col(len: usize) -> Self {
        Self { rows: len, cols: 1 }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// Owned dense matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.len() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} buffer for shape {shape}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn col(data: Vec<f64>) -> Self {
        Self {
            shape: Shape::col(data.len()),
            data,
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Max(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Offset(usize),
    MaxConst(usize, f64),
    MatMul(usize, usize),
    Transpose(usize),
    Sum(usize),
    Log(usize),
    Exp(usize),
    Sqrt(usize),
    Square(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Lgamma(usize),
    Concat(Vec<usize>),
    Slice(usize, usize),
    Reshape(usize),
    LogDet(usize),
    InvQuad(usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    shape: Shape,
    op: Op,
}

/// Append-only computation graph. Parents always precede children.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Vec<f64>, shape: Shape, op: Op) -> Var<'_> {
        debug_assert_eq!(value.len(), shape.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, shape, op });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    /// Drops every node recorded after the first `len`. Vars created after
    /// that point must not be used again.
    pub fn truncate(&self, len: usize) {
        self.nodes.borrow_mut().truncate(len);
    }

    /// Records an input node. Parameters and constants are both leaves; the
    /// only difference is whether the caller reads their gradient.
    pub fn leaf(&self, t: &Tensor) -> Var<'_> {
        self.push(t.data.clone(), t.shape, Op::Leaf)
    }

    pub fn var(&self, shape: Shape, data: Vec<f64>) -> Result<Var<'_>> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t.data, t.shape, Op::Leaf))
    }

    pub fn column(&self, data: &[f64]) -> Var<'_> {
        self.push(data.to_vec(), Shape::col(data.len()), Op::Leaf)
    }

    pub fn scalar(&self, x: f64) -> Var<'_> {
        self.push(vec![x], Shape::SCALAR, Op::Leaf)
    }

    pub fn zeros(&self, shape: Shape) -> Var<'_> {
        self.push(vec![0.0; shape.len()], shape, Op::Leaf)
    }

    /// Stacks the flattened values of `parts` into one column vector.
    pub fn concat(&self, parts: &[Var<'_>]) -> Result<Var<'_>> {
        if parts.is_empty() {
            return Err(Error::ShapeMismatch("concat of nothing".into()));
        }
        let nodes = self.nodes.borrow();
        let mut value = Vec::new();
        for p in parts {
            if !std::ptr::eq(p.tape, self) {
                return Err(Error::ShapeMismatch("concat across tapes".into()));
            }
            value.extend_from_slice(&nodes[p.idx].value);
        }
        drop(nodes);
        let shape = Shape::col(value.len());
        Ok(self.push(value, shape, Op::Concat(parts.iter().map(|p| p.idx).collect())))
    }
}

fn broadcast_shape(a: Shape, b: Shape, what: &str) -> Result<Shape> {
    if a == b || b.len() == 1 {
        Ok(a)
    } else if a.len() == 1 {
        Ok(b)
    } else {
        Err(Error::ShapeMismatch(format!("{what}: {a} vs {b}")))
    }
}

#[inline]
fn bidx(len: usize, k: usize) -> usize {
    if len == 1 {
        0
    } else {
        k
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn index(&self) -> usize {
        self.idx
    }

    pub fn shape(&self) -> Shape {
        self.tape.nodes.borrow()[self.idx].shape
    }

    pub fn value(&self) -> Vec<f64> {
        self.tape.nodes.borrow()[self.idx].value.clone()
    }

    /// First element of the value; the value itself for scalars.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.idx].value[0]
    }

    fn same_tape(&self, other: &Var<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("operands live on different tapes".into()))
        }
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.idx];
        let value = n.value.iter().map(|&x| f(x)).collect();
        let shape = n.shape;
        drop(nodes);
        self.tape.push(value, shape, op)
    }

    fn checked_unary(&self, op: Op, name: &str, ok: impl Fn(f64) -> bool, f: impl Fn(f64) -> f64) -> Result<Var<'t>> {
        {
            let nodes = self.tape.nodes.borrow();
            if let Some(bad) = nodes[self.idx].value.iter().find(|&&x| !ok(x)) {
                return Err(Error::Domain(format!("{name} of {bad}")));
            }
        }
        Ok(self.unary(op, f))
    }

    fn binary(&self, other: &Var<'t>, what: &str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.idx], &nodes[other.idx]);
        let shape = broadcast_shape(a.shape, b.shape, what)?;
        let (la, lb) = (a.value.len(), b.value.len());
        let value = (0..shape.len())
            .map(|k| f(a.value[bidx(la, k)], b.value[bidx(lb, k)]))
            .collect();
        drop(nodes);
        Ok(self.tape.push(value, shape, op))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.idx, other.idx), |a, b| a + b)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.idx, other.idx), |a, b| a - b)
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.idx, other.idx), |a, b| a * b)
    }

    pub fn div(&self, other: &Var<'t>) -> Result<Var<'t>> {
        {
            let nodes = self.tape.nodes.borrow();
            if other.idx < nodes.len() && nodes[other.idx].value.iter().any(|&x| x == 0.0) {
                return Err(Error::Domain("division by zero".into()));
            }
        }
        self.binary(other, "div", Op::Div(self.idx, other.idx), |a, b| a / b)
    }

    /// Elementwise maximum; ties send the gradient to `self`.
    pub fn max(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "max", Op::Max(self.idx, other.idx), f64::max)
    }

    pub fn max_const(&self, floor: f64) -> Var<'t> {
        self.unary(Op::MaxConst(self.idx, floor), |x| x.max(floor))
    }

    /// `|x|` as `max(x, −x)`.
    pub fn abs(&self) -> Var<'t> {
        let neg = self.neg();
        self.max(&neg).expect("same shape and tape")
    }

    pub fn neg(&self) -> Var<'t> {
        self.unary(Op::Neg(self.idx), |x| -x)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.idx, c), |x| c * x)
    }

    pub fn offset(&self, c: f64) -> Var<'t> {
        self.unary(Op::Offset(self.idx), |x| x + c)
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp(self.idx), f64::exp)
    }

    pub fn square(&self) -> Var<'t> {
        self.unary(Op::Square(self.idx), |x| x * x)
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.idx), sigmoid)
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(Op::Tanh(self.idx), f64::tanh)
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.idx), |x| x.max(0.0))
    }

    pub fn log(&self) -> Result<Var<'t>> {
        self.checked_unary(Op::Log(self.idx), "log", |x| x > 0.0, f64::ln)
    }

    pub fn sqrt(&self) -> Result<Var<'t>> {
        self.checked_unary(Op::Sqrt(self.idx), "sqrt", |x| x > 0.0, f64::sqrt)
    }

    pub fn lgamma(&self) -> Result<Var<'t>> {
        self.checked_unary(Op::Lgamma(self.idx), "lgamma", |x| x > 0.0, special::lgamma)
    }

    pub fn sum(&self) -> Var<'t> {
        let total = self.tape.nodes.borrow()[self.idx].value.iter().sum();
        self.tape.push(vec![total], Shape::SCALAR, Op::Sum(self.idx))
    }

    pub fn transpose(&self) -> Var<'t> {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.idx];
        let Shape { rows, cols } = n.shape;
        let mut value = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                value[j * rows + i] = n.value[i * cols + j];
            }
        }
        drop(nodes);
        self.tape.push(value, Shape::new(cols, rows), Op::Transpose(self.idx))
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.idx], &nodes[other.idx]);
        if a.shape.cols != b.shape.rows {
            return Err(Error::ShapeMismatch(format!("matmul {} · {}", a.shape, b.shape)));
        }
        let (m, k, n) = (a.shape.rows, a.shape.cols, b.shape.cols);
        let mut value = vec![0.0; m * n];
        if n == 1 {
            for (i, v) in value.iter_mut().enumerate() {
                *v = dot(&a.value[i * k..(i + 1) * k], &b.value);
            }
            drop(nodes);
            return Ok(self.tape.push(value, Shape::new(m, n), Op::MatMul(self.idx, other.idx)));
        }
        for i in 0..m {
            let arow = &a.value[i * k..(i + 1) * k];
            let out = &mut value[i * n..(i + 1) * n];
            for (p, &aip) in arow.iter().enumerate() {
                let brow = &b.value[p * n..(p + 1) * n];
                for (o, &bpj) in out.iter_mut().zip(brow) {
                    *o += aip * bpj;
                }
            }
        }
        drop(nodes);
        Ok(self.tape.push(value, Shape::new(m, n), Op::MatMul(self.idx, other.idx)))
    }

    /// Contiguous range `[start, start + len)` of the flattened value, as a
    /// column vector.
    pub fn slice(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.idx];
        if start + len > n.value.len() || len == 0 {
            return Err(Error::ShapeMismatch(format!(
                "slice {start}..{} of {}",
                start + len,
                n.shape
            )));
        }
        let value = n.value[start..start + len].to_vec();
        drop(nodes);
        Ok(self.tape.push(value, Shape::col(len), Op::Slice(self.idx, start)))
    }

    pub fn reshape(&self, shape: Shape) -> Result<Var<'t>> {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.idx];
        if n.shape.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!("reshape {} to {shape}", n.shape)));
        }
        let value = n.value.clone();
        drop(nodes);
        Ok(self.tape.push(value, shape, Op::Reshape(self.idx)))
    }

    fn square_matrix(&self) -> Result<(usize, Vec<f64>)> {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.idx];
        if n.shape.rows != n.shape.cols {
            return Err(Error::ShapeMismatch(format!("expected square matrix, got {}", n.shape)));
        }
        Ok((n.shape.rows, n.value.clone()))
    }

    /// `log|Σ|` of a symmetric positive-definite matrix via Cholesky (with the
    /// symmetrize-then-jitter rule of [`linalg`]).
    pub fn logdet(&self) -> Result<Var<'t>> {
        let (n, m) = self.square_matrix()?;
        let l = linalg::factor_with_jitter(n, &m).map_err(|pivot| Error::NotPositiveDefinite { pivot })?;
        let v = linalg::logdet_from_chol(n, &l);
        Ok(self.tape.push(vec![v], Shape::SCALAR, Op::LogDet(self.idx)))
    }

    /// `vᵀ Σ⁻¹ v` with `self = Σ`.
    pub fn inv_quad(&self, v: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(v)?;
        let (n, m) = self.square_matrix()?;
        let vv = v.value();
        if vv.len() != n {
            return Err(Error::ShapeMismatch(format!("inv_quad: {n}x{n} against {}", vv.len())));
        }
        let l = linalg::factor_with_jitter(n, &m).map_err(|pivot| Error::NotPositiveDefinite { pivot })?;
        let q = linalg::quadform_from_chol(n, &l, &vv);
        Ok(self.tape.push(vec![q], Shape::SCALAR, Op::InvQuad(self.idx, v.idx)))
    }

    /// Reverse pass from this scalar node.
    pub fn backward(&self) -> Result<Gradients> {
        let nodes = self.tape.nodes.borrow();
        let root = &nodes[self.idx];
        if root.shape.len() != 1 {
            return Err(Error::NonScalarLoss {
                rows: root.shape.rows,
                cols: root.shape.cols,
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.idx + 1];
        grads[self.idx] = Some(vec![1.0]);
        for i in (0..=self.idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            propagate(&nodes, i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn acc<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], idx: usize) -> &'g mut Vec<f64> {
    grads[idx].get_or_insert_with(|| vec![0.0; nodes[idx].value.len()])
}

fn propagate(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[i];
    let out = &node.value;
    match node.op {
        Op::Leaf => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            let (la, lb) = (nodes[a].value.len(), nodes[b].value.len());
            {
                let ga = acc(grads, nodes, a);
                for (k, gk) in g.iter().enumerate() {
                    ga[bidx(la, k)] += gk;
                }
            }
            let gb = acc(grads, nodes, b);
            for (k, gk) in g.iter().enumerate() {
                gb[bidx(lb, k)] += sign * gk;
            }
        }
        Op::Mul(a, b) => {
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            let (la, lb) = (va.len(), vb.len());
            {
                let ga = acc(grads, nodes, a);
                for (k, gk) in g.iter().enumerate() {
                    ga[bidx(la, k)] += gk * vb[bidx(lb, k)];
                }
            }
            let gb = acc(grads, nodes, b);
            for (k, gk) in g.iter().enumerate() {
                gb[bidx(lb, k)] += gk * va[bidx(la, k)];
            }
        }
        Op::Div(a, b) => {
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            let (la, lb) = (va.len(), vb.len());
            {
                let ga = acc(grads, nodes, a);
                for (k, gk) in g.iter().enumerate() {
                    ga[bidx(la, k)] += gk / vb[bidx(lb, k)];
                }
            }
            let gb = acc(grads, nodes, b);
            for (k, gk) in g.iter().enumerate() {
                let d = vb[bidx(lb, k)];
                gb[bidx(lb, k)] -= gk * va[bidx(la, k)] / (d * d);
            }
        }
        Op::Max(a, b) => {
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            let (la, lb) = (va.len(), vb.len());
            let pick_a: Vec<bool> = (0..g.len()).map(|k| va[bidx(la, k)] >= vb[bidx(lb, k)]).collect();
            {
                let ga = acc(grads, nodes, a);
                for (k, gk) in g.iter().enumerate() {
                    if pick_a[k] {
                        ga[bidx(la, k)] += gk;
                    }
                }
            }
            let gb = acc(grads, nodes, b);
            for (k, gk) in g.iter().enumerate() {
                if !pick_a[k] {
                    gb[bidx(lb, k)] += gk;
                }
            }
        }
        Op::Neg(a) => {
            let ga = acc(grads, nodes, a);
            ga.iter_mut().zip(g).for_each(|(x, gk)| *x -= gk);
        }
        Op::Scale(a, c) => {
            let ga = acc(grads, nodes, a);
            ga.iter_mut().zip(g).for_each(|(x, gk)| *x += c * gk);
        }
        Op::Offset(a) | Op::Reshape(a) => {
            let ga = acc(grads, nodes, a);
            ga.iter_mut().zip(g).for_each(|(x, gk)| *x += gk);
        }
        Op::MaxConst(a, floor) => {
            let va = &nodes[a].value;
            let ga = acc(grads, nodes, a);
            for k in 0..g.len() {
                if va[k] >= floor {
                    ga[k] += g[k];
                }
            }
        }
        Op::MatMul(a, b) => {
            let (sa, sb) = (nodes[a].shape, nodes[b].shape);
            let (m, kk, n) = (sa.rows, sa.cols, sb.cols);
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            if n == 1 {
                {
                    let ga = acc(grads, nodes, a);
                    for i in 0..m {
                        let gi = g[i];
                        for (d, bp) in ga[i * kk..(i + 1) * kk].iter_mut().zip(vb) {
                            *d += gi * bp;
                        }
                    }
                }
                let gb = acc(grads, nodes, b);
                for i in 0..m {
                    let gi = g[i];
                    for (d, ap) in gb.iter_mut().zip(&va[i * kk..(i + 1) * kk]) {
                        *d += gi * ap;
                    }
                }
                return;
            }
            {
                // dA = G · Bᵀ
                let ga = acc(grads, nodes, a);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..kk {
                        let brow = &vb[p * n..(p + 1) * n];
                        ga[i * kk + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            // dB = Aᵀ · G
            let gb = acc(grads, nodes, b);
            for i in 0..m {
                let grow = &g[i * n..(i + 1) * n];
                for p in 0..kk {
                    let aip = va[i * kk + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let dst = &mut gb[p * n..(p + 1) * n];
                    for (d, gij) in dst.iter_mut().zip(grow) {
                        *d += aip * gij;
                    }
                }
            }
        }
        Op::Transpose(a) => {
            let Shape { rows, cols } = nodes[a].shape;
            let ga = acc(grads, nodes, a);
            for i in 0..rows {
                for j in 0..cols {
                    ga[i * cols + j] += g[j * rows + i];
                }
            }
        }
        Op::Sum(a) => {
            let ga = acc(grads, nodes, a);
            ga.iter_mut().for_each(|x| *x += g[0]);
        }
        Op::Log(a) => {
            let va = &nodes[a].value;
            let ga = acc(grads, nodes, a);
            for k in 0..g.len() {
                ga[k] += g[k] / va[k];
            }
        }
        Op::Exp(a) => {
            let ga = acc(grads, nodes, a);
            for k in 0..g.len() {
                ga[k] += g[k] * out[k];
            }
        }
        Op::Sqrt(a) => {
            let ga = acc(grads, nodes, a);
            for k in 0..g.len() {
                ga[k] += g[k] * 0.5 / out[k];
            }
        }
        Op::Square(a) => {
            let va = &nodes[a].value;
            let ga = acc(grads, nodes, a);
            for k in 0..g.len() {
                ga[k] += g[k] * 2.0 * va[k];
            }
        }
        Op::Sigmoid(a) => {
            let ga = acc(grads, nodes, a);
            for k in 0..g.len() {
                ga[k] += g[k] * out[k] * (1.0 - out[k]);
            }
        }
        Op::Tanh(a) => {
            let ga = acc(grads, nodes, a);
            for k in 0..g.len() {
                ga[k] += g[k] * (1.0 - out[k] * out[k]);
            }
        }
        Op::Relu(a) => {
            let va = &nodes[a].value;
            let ga = acc(grads, nodes, a);
            for k in 0..g.len() {
                if va[k] > 0.0 {
                    ga[k] += g[k];
                }
            }
        }
        Op::Lgamma(a) => {
            let va = &nodes[a].value;
            let ga = acc(grads, nodes, a);
            for k in 0..g.len() {
                ga[k] += g[k] * special::digamma(va[k]);
            }
        }
        Op::Concat(ref parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p].value.len();
                let gp = acc(grads, nodes, p);
                for k in 0..len {
                    gp[k] += g[offset + k];
                }
                offset += len;
            }
        }
        Op::Slice(a, start) => {
            let ga = acc(grads, nodes, a);
            for (k, gk) in g.iter().enumerate() {
                ga[start + k] += gk;
            }
        }
        Op::LogDet(a) => {
            let n = nodes[a].shape.rows;
            let m = linalg::effective_matrix(n, &nodes[a].value);
            let l = linalg::factor(n, &m).expect("factored in forward pass");
            let inv = linalg::chol_inverse(n, &l);
            let ga = acc(grads, nodes, a);
            ga.iter_mut().zip(&inv).for_each(|(x, s)| *x += g[0] * s);
        }
        Op::InvQuad(a, v) => {
            let n = nodes[a].shape.rows;
            let m = linalg::effective_matrix(n, &nodes[a].value);
            let l = linalg::factor(n, &m).expect("factored in forward pass");
            let x = linalg::chol_solve(n, &l, &nodes[v].value);
            {
                let ga = acc(grads, nodes, a);
                for i in 0..n {
                    for j in 0..n {
                        ga[i * n + j] -= g[0] * x[i] * x[j];
                    }
                }
            }
            let gv = acc(grads, nodes, v);
            for i in 0..n {
                gv[i] += 2.0 * g[0] * x[i];
            }
        }
    }
}

/// Gradients of one backward pass, indexed by tape node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when the node does not influence the loss.
    pub fn get(&self, v: Var<'_>) -> Option<&[f64]> {
        self.grads.get(v.idx).and_then(|g| g.as_deref())
    }

    /// Gradient with zeros for nodes that do not influence the loss.
    pub fn wrt(&self, v: Var<'_>) -> Vec<f64> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; v.shape().len()],
        }
    }
}

/// Named trainable tensors with per-tensor gradient buffers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Index of a tensor in a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Records every tensor as a leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        BoundParams {
            vars: self.tensors.iter().map(|t| tape.leaf(t)).collect(),
        }
    }

    /// Flattened copy of all values, in insertion order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn unflatten(&mut self, flat: &[f64]) {
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.data.len();
            t.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }
}

/// Leaves of a [`ParamSet`] on a particular tape.
#[derive(Debug, Clone)]
pub struct BoundParams<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> BoundParams<'t> {
    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    /// Flattened gradient in the [`ParamSet::flatten`] order.
    pub fn gradient(&self, grads: &Gradients) -> Vec<f64> {
        self.vars.iter().flat_map(|v| grads.wrt(*v)).collect()
    }

    /// Adds this pass's gradients into caller-owned buffers.
    pub fn accumulate(&self, grads: &Gradients, buffers: &mut [Vec<f64>]) {
        for (v, buf) in self.vars.iter().zip(buffers.iter_mut()) {
            if let Some(g) = grads.get(*v) {
                buf.iter_mut().zip(g).for_each(|(b, x)| *b += x);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_slope_at_zero() {
        let tape = Tape::new();
        let x = tape.scalar(0.0);
        let g = x.sigmoid().backward().unwrap();
        assert_eq!(g.wrt(x), vec![0.25]);
    }

    #[test]
    fn lgamma_slope_at_one() {
        let tape = Tape::new();
        let x = tape.scalar(1.0);
        let g = x.lgamma().unwrap().backward().unwrap();
        assert!((g.wrt(x)[0] + 0.577_215_664_9).abs() < 1e-10);
    }

    #[test]
    fn log_slope() {
        let tape = Tape::new();
        let x = tape.scalar(2.0);
        let g = x.log().unwrap().backward().unwrap();
        assert_eq!(g.wrt(x), vec![0.5]);
    }

    #[test]
    fn square_slope() {
        let tape = Tape::new();
        let x = tape.scalar(3.0);
        assert_eq!(x.square().backward().unwrap().wrt(x), vec![6.0]);
    }

    #[test]
    fn vector_loss_rejected() {
        let tape = Tape::new();
        let x = tape.column(&[1.0, 2.0]);
        assert_eq!(
            x.exp().backward().unwrap_err(),
            Error::NonScalarLoss { rows: 2, cols: 1 }
        );
    }

    #[test]
    fn domain_errors() {
        let tape = Tape::new();
        let x = tape.column(&[1.0, 0.0]);
        assert!(matches!(x.log(), Err(Error::Domain(_))));
        assert!(matches!(x.sqrt(), Err(Error::Domain(_))));
        assert!(matches!(x.neg().lgamma(), Err(Error::Domain(_))));
    }

    #[test]
    fn shape_mismatch() {
        let tape = Tape::new();
        let a = tape.column(&[1.0, 2.0]);
        let b = tape.column(&[1.0, 2.0, 3.0]);
        assert!(matches!(a.add(&b), Err(Error::ShapeMismatch(_))));
        assert!(matches!(a.matmul(&b), Err(Error::ShapeMismatch(_))));
        assert!(matches!(a.slice(1, 2), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn scalar_broadcast_gradient_sums() {
        let tape = Tape::new();
        let s = tape.scalar(2.0);
        let v = tape.column(&[1.0, 2.0, 3.0]);
        let loss = v.mul(&s).unwrap().sum();
        let g = loss.backward().unwrap();
        assert_eq!(g.wrt(s), vec![6.0]);
        assert_eq!(g.wrt(v), vec![2.0; 3]);
    }

    #[test]
    fn unused_leaf_has_no_gradient() {
        let tape = Tape::new();
        let x = tape.scalar(1.0);
        let y = tape.scalar(2.0);
        let g = x.exp().backward().unwrap();
        assert!(g.get(y).is_none());
        assert_eq!(g.wrt(y), vec![0.0]);
    }

    #[test]
    fn logdet_and_inv_quad_values() {
        let tape = Tape::new();
        let m = tape.var(Shape::new(2, 2), vec![4.0, 0.0, 0.0, 9.0]).unwrap();
        let v = tape.column(&[2.0, 3.0]);
        assert!((m.logdet().unwrap().item() - 36f64.ln()).abs() < 1e-14);
        assert!((m.inv_quad(&v).unwrap().item() - 2.0).abs() < 1e-14);
    }
}
