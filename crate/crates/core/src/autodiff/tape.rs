//! Reverse-mode automatic differentiation on a recorded tape.
//!
//! A [`Tape`] owns every intermediate value. Operations append a node holding
//! the forward value and enough information to apply its adjoint rule; a
//! [`Var`] is only a handle into that list. Node inputs always have smaller
//! ids than the node itself, so a single reverse sweep visits nodes in
//! topological order.
//!
//! ```
//! use hyprown::autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).item().unwrap(), 6.0);
//! ```

use std::cell::{Cell, Ref, RefCell};

use super::tensor::{broadcast_shape, for_each_broadcast, Tensor};
use crate::error::{Error, Result};
use crate::special;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryOp {
    Neg,
    Scale(f64),
    Shift(f64),
    Exp,
    Log,
    Sinh,
    Cosh,
    Tanh,
    Sqrt,
    Square,
    Softplus,
    Relu,
    /// `arcosh(max(x, 1))`
    Acosh,
    /// `cosh(√s)`
    CoshSqrt,
    /// `sinh(√s)/√s`
    SinhcSqrt,
    /// `log(sinh(√s)/√s)`
    LogSinhcSqrt,
    /// `arcosh(a)/√(a²−1)`
    AcoshRatio,
}

impl UnaryOp {
    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Scale(_) => "scale",
            UnaryOp::Shift(_) => "shift",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sinh => "sinh",
            UnaryOp::Cosh => "cosh",
            UnaryOp::Tanh => "tanh",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Square => "square",
            UnaryOp::Softplus => "softplus",
            UnaryOp::Relu => "relu",
            UnaryOp::Acosh => "acosh",
            UnaryOp::CoshSqrt => "cosh_sqrt",
            UnaryOp::SinhcSqrt => "sinhc_sqrt",
            UnaryOp::LogSinhcSqrt => "log_sinhc_sqrt",
            UnaryOp::AcoshRatio => "acosh_ratio",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            UnaryOp::Neg => -x,
            UnaryOp::Scale(c) => c * x,
            UnaryOp::Shift(c) => x + c,
            UnaryOp::Exp => x.exp(),
            UnaryOp::Log => x.ln(),
            UnaryOp::Sinh => x.sinh(),
            UnaryOp::Cosh => x.cosh(),
            UnaryOp::Tanh => x.tanh(),
            UnaryOp::Sqrt => x.sqrt(),
            UnaryOp::Square => x * x,
            UnaryOp::Softplus => special::softplus(x),
            UnaryOp::Relu => x.max(0.0),
            UnaryOp::Acosh => special::acosh_clamped(x),
            UnaryOp::CoshSqrt => special::cosh_sqrt(x),
            UnaryOp::SinhcSqrt => special::sinhc_sqrt(x),
            UnaryOp::LogSinhcSqrt => special::log_sinhc_sqrt(x),
            UnaryOp::AcoshRatio => special::acosh_ratio(x),
        }
    }

    /// Derivative given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryOp::Neg => -1.0,
            UnaryOp::Scale(c) => c,
            UnaryOp::Shift(_) => 1.0,
            UnaryOp::Exp => y,
            UnaryOp::Log => 1.0 / x,
            UnaryOp::Sinh => x.cosh(),
            UnaryOp::Cosh => x.sinh(),
            UnaryOp::Tanh => 1.0 - y * y,
            UnaryOp::Sqrt => 0.5 / y,
            UnaryOp::Square => 2.0 * x,
            UnaryOp::Softplus => special::sigmoid(x),
            // subgradient at the kink is 0
            UnaryOp::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryOp::Acosh => {
                if x <= 1.0 {
                    0.0
                } else {
                    1.0 / ((x - 1.0) * (x + 1.0)).sqrt()
                }
            }
            UnaryOp::CoshSqrt => special::cosh_sqrt_grad(x),
            UnaryOp::SinhcSqrt => special::sinhc_sqrt_grad(x),
            UnaryOp::LogSinhcSqrt => special::log_sinhc_sqrt_grad(x),
            UnaryOp::AcoshRatio => special::acosh_ratio_grad(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Binary(BinaryOp, usize, usize),
    Unary(UnaryOp, usize),
    SumAll(usize),
    SumAxis(usize, usize),
    MatMul(usize, usize),
    Reshape(usize),
    Transpose(usize),
    Concat(Vec<usize>, usize),
    Slice { input: usize, axis: usize, start: usize },
    Gather { input: usize, index: Vec<usize> },
    LorentzInner(usize, usize),
    Cholesky(usize),
    TriSolve(usize, usize),
    Diagonal(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar loss with respect to every node of a tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`, zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

/// The recording tape. Single-owner; not `Sync`.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Splits `[..., m, k]` into `(batch, m, k)`.
fn batch_dims(shape: &[usize]) -> (usize, usize, usize) {
    let r = shape.len();
    (shape[..r - 2].iter().product(), shape[r - 2], shape[r - 1])
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

    fn push(&self, value: Tensor, op: Op, needs_grad: bool, name: &'static str) -> Result<Var> {
        if self.consumed.get() {
            return Err(Error::State("tape already consumed by backward()".into()));
        }
        if !value.is_finite() {
            return Err(Error::Numeric { op: name });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, needs_grad });
        Ok(Var(nodes.len() - 1))
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true, "leaf").expect("leaf values must be finite on a live tape")
    }

    pub fn try_leaf(&self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, true, "leaf")
    }

    /// A value that receives no gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false, "constant")
            .expect("constant values must be finite on a live tape")
    }

    pub fn scalar_const(&self, x: f64) -> Var {
        self.constant(Tensor::scalar(x))
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// Value of a one-element node.
    pub fn item(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    // ---- elementwise -------------------------------------------------

    fn binary(&self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
        let out_shape = broadcast_shape(ta.shape(), tb.shape()).ok_or_else(|| {
            Error::dim(format!("{op:?}: cannot broadcast {:?} with {:?}", ta.shape(), tb.shape()))
        })?;
        let mut out = vec![0.0; out_shape.iter().product()];
        let (da, db) = (ta.data(), tb.data());
        match op {
            BinaryOp::Add => for_each_broadcast(&out_shape, ta.shape(), tb.shape(), |o, i, j| {
                out[o] = da[i] + db[j]
            }),
            BinaryOp::Sub => for_each_broadcast(&out_shape, ta.shape(), tb.shape(), |o, i, j| {
                out[o] = da[i] - db[j]
            }),
            BinaryOp::Mul => for_each_broadcast(&out_shape, ta.shape(), tb.shape(), |o, i, j| {
                out[o] = da[i] * db[j]
            }),
            BinaryOp::Div => for_each_broadcast(&out_shape, ta.shape(), tb.shape(), |o, i, j| {
                out[o] = da[i] / db[j]
            }),
        }
        let needs = nodes[a.0].needs_grad || nodes[b.0].needs_grad;
        drop(nodes);
        let name = match op {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
        };
        self.push(Tensor::from_parts(out_shape, out), Op::Binary(op, a.0, b.0), needs, name)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn unary(&self, op: UnaryOp, a: Var) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let out = nodes[a.0].value.map(|x| op.apply(x));
        let needs = nodes[a.0].needs_grad;
        drop(nodes);
        self.push(out, Op::Unary(op, a.0), needs, op.name())
    }

    pub fn neg(&self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Neg, a)
    }

    pub fn scale(&self, a: Var, c: f64) -> Result<Var> {
        self.unary(UnaryOp::Scale(c), a)
    }

    pub fn shift(&self, a: Var, c: f64) -> Result<Var> {
        self.unary(UnaryOp::Shift(c), a)
    }

    pub fn exp(&self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn log(&self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, a)
    }

    pub fn sinh(&self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Sinh, a)
    }

    pub fn cosh(&self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Cosh, a)
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Tanh, a)
    }

    pub fn sqrt(&self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Sqrt, a)
    }

    pub fn square(&self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Square, a)
    }

    pub fn softplus(&self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Softplus, a)
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Relu, a)
    }

    pub fn acosh(&self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Acosh, a)
    }

    // ---- reductions and shape ops -------------------------------------

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self, a: Var) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let s: f64 = nodes[a.0].value.data().iter().sum();
        let needs = nodes[a.0].needs_grad;
        drop(nodes);
        self.push(Tensor::scalar(s), Op::SumAll(a.0), needs, "sum")
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Sum along `axis`, keeping it with size 1.
    pub fn sum_axis(&self, a: Var, axis: usize) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let t = &nodes[a.0].value;
        if axis >= t.rank() {
            return Err(Error::dim(format!("sum_axis {axis} of rank {}", t.rank())));
        }
        let (outer, len, inner) = axis_split(t.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        let d = t.data();
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += d[base + i];
                }
            }
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = 1;
        let needs = nodes[a.0].needs_grad;
        drop(nodes);
        self.push(Tensor::from_parts(shape, out), Op::SumAxis(a.0, axis), needs, "sum_axis")
    }

    /// Sum over the last axis, keeping it with size 1.
    pub fn sum_last(&self, a: Var) -> Result<Var> {
        let r = self.value(a).rank();
        if r == 0 {
            return Ok(a);
        }
        self.sum_axis(a, r - 1)
    }

    pub fn mean_last(&self, a: Var) -> Result<Var> {
        let k = *self.value(a).shape().last().unwrap_or(&1);
        let s = self.sum_last(a)?;
        self.scale(s, 1.0 / k as f64)
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let t = nodes[a.0].value.clone().reshaped(shape.to_vec())?;
        let needs = nodes[a.0].needs_grad;
        drop(nodes);
        self.push(t, Op::Reshape(a.0), needs, "reshape")
    }

    /// Swaps the last two axes.
    pub fn transpose(&self, a: Var) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let t = &nodes[a.0].value;
        if t.rank() < 2 {
            return Err(Error::dim("transpose needs rank >= 2"));
        }
        let out = transpose_last(t);
        let needs = nodes[a.0].needs_grad;
        drop(nodes);
        self.push(out, Op::Transpose(a.0), needs, "transpose")
    }

    /// Concatenation along `axis`; all other axes must agree.
    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat of nothing"));
        }
        let nodes = self.nodes.borrow();
        let first = nodes[parts[0].0].value.shape().to_vec();
        if axis >= first.len() {
            return Err(Error::dim("concat axis out of range"));
        }
        let mut total = 0;
        for p in parts {
            let s = nodes[p.0].value.shape();
            if s.len() != first.len()
                || s.iter().zip(&first).enumerate().any(|(i, (x, y))| i != axis && x != y)
            {
                return Err(Error::dim(format!("concat: shape {s:?} vs {first:?}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = &nodes[p.0].value;
                let len = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let needs = parts.iter().any(|p| nodes[p.0].needs_grad);
        drop(nodes);
        self.push(
            Tensor::from_parts(shape, out),
            Op::Concat(parts.iter().map(|p| p.0).collect(), axis),
            needs,
            "concat",
        )
    }

    /// `a[..., start..end, ...]` along `axis`.
    pub fn slice(&self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let t = &nodes[a.0].value;
        if axis >= t.rank() || start > end || end > t.shape()[axis] {
            return Err(Error::dim(format!(
                "slice {start}..{end} on axis {axis} of shape {:?}",
                t.shape()
            )));
        }
        let (outer, len, inner) = axis_split(t.shape(), axis);
        let w = end - start;
        let mut out = Vec::with_capacity(outer * w * inner);
        for o in 0..outer {
            let base = (o * len + start) * inner;
            out.extend_from_slice(&t.data()[base..base + w * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = w;
        let needs = nodes[a.0].needs_grad;
        drop(nodes);
        self.push(
            Tensor::from_parts(shape, out),
            Op::Slice { input: a.0, axis, start },
            needs,
            "slice",
        )
    }

    /// Columns `start..end` of the last axis.
    pub fn cols(&self, a: Var, start: usize, end: usize) -> Result<Var> {
        let r = self.value(a).rank();
        self.slice(a, r - 1, start, end)
    }

    /// Rows of `a` (along axis 0) selected by `index`, repeats allowed.
    pub fn gather(&self, a: Var, index: &[usize]) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let t = &nodes[a.0].value;
        if t.rank() == 0 {
            return Err(Error::dim("gather on a scalar"));
        }
        let rows = t.shape()[0];
        let inner: usize = t.shape()[1..].iter().product();
        let mut out = Vec::with_capacity(index.len() * inner);
        for &i in index {
            if i >= rows {
                return Err(Error::dim(format!("gather index {i} out of {rows}")));
            }
            out.extend_from_slice(&t.data()[i * inner..(i + 1) * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = index.len();
        let needs = nodes[a.0].needs_grad;
        drop(nodes);
        self.push(
            Tensor::from_parts(shape, out),
            Op::Gather { input: a.0, index: index.to_vec() },
            needs,
            "gather",
        )
    }

    // ---- linear algebra --------------------------------------------------

    /// `[m,k]·[k,n]`, or batched `[b,m,k]·[b,k,n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
        let out = matmul_tensors(ta, tb, false, false)?;
        let needs = nodes[a.0].needs_grad || nodes[b.0].needs_grad;
        drop(nodes);
        self.push(out, Op::MatMul(a.0, b.0), needs, "matmul")
    }

    /// Rowwise outer product `[..., n] × [..., m] → [..., n, m]`.
    pub fn outer(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let mut ra = sa.clone();
        ra.push(1);
        let mut rb = sb[..sb.len() - 1].to_vec();
        rb.push(1);
        rb.push(*sb.last().unwrap_or(&1));
        let a2 = self.reshape(a, &ra)?;
        let b2 = self.reshape(b, &rb)?;
        self.mul(a2, b2)
    }

    /// Batched matrix-vector product `[b,n,k]·[b,k] → [b,n]`.
    pub fn matvec(&self, m: Var, v: Var) -> Result<Var> {
        let sv = self.shape(v);
        let mut col = sv.clone();
        col.push(1);
        let vc = self.reshape(v, &col)?;
        let out = self.matmul(m, vc)?;
        self.reshape(out, &sv_with_rows(&self.shape(out)))
    }

    /// Rowwise `⟨a,b⟩_L` over the last axis: `[..., k] × [..., k] → [..., 1]`.
    pub fn lorentz_inner(&self, a: Var, b: Var) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
        if ta.shape() != tb.shape() || ta.rank() == 0 {
            return Err(Error::dim(format!(
                "lorentz_inner of shapes {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let k = *ta.shape().last().unwrap();
        if k < 2 {
            return Err(Error::dim("lorentz_inner needs at least 2 coordinates"));
        }
        let out: Vec<f64> = ta
            .rows()
            .zip(tb.rows())
            .map(|(x, y)| -x[0] * y[0] + x[1..].iter().zip(&y[1..]).map(|(p, q)| p * q).sum::<f64>())
            .collect();
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        let needs = nodes[a.0].needs_grad || nodes[b.0].needs_grad;
        drop(nodes);
        self.push(Tensor::from_parts(shape, out), Op::LorentzInner(a.0, b.0), needs, "lorentz_inner")
    }

    /// Rowwise Euclidean dot product over the last axis, keeping it as size 1.
    pub fn dot_last(&self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        self.sum_last(p)
    }

    /// Lower Cholesky factor of the symmetric part of each `[..., n, n]` block.
    pub fn cholesky(&self, a: Var) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let t = &nodes[a.0].value;
        if t.rank() < 2 || t.shape()[t.rank() - 1] != t.shape()[t.rank() - 2] {
            return Err(Error::dim(format!("cholesky of shape {:?}", t.shape())));
        }
        let (b, n, _) = batch_dims(t.shape());
        let mut out = vec![0.0; t.numel()];
        for bi in 0..b {
            let src = &t.data()[bi * n * n..(bi + 1) * n * n];
            let dst = &mut out[bi * n * n..(bi + 1) * n * n];
            chol_block(src, dst, n)?;
        }
        let needs = nodes[a.0].needs_grad;
        let shape = t.shape().to_vec();
        drop(nodes);
        self.push(Tensor::from_parts(shape, out), Op::Cholesky(a.0), needs, "cholesky")
    }

    /// Solves `L x = b` for lower-triangular `L`: `[..., n, n] × [..., n] → [..., n]`.
    /// Only the lower triangle of `L` is read.
    pub fn tri_solve(&self, l: Var, b: Var) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let (tl, tb) = (&nodes[l.0].value, &nodes[b.0].value);
        let n = *tb.shape().last().unwrap_or(&0);
        if tl.rank() != tb.rank() + 1
            || tl.shape()[..tl.rank() - 2] != tb.shape()[..tb.rank() - 1]
            || tl.shape()[tl.rank() - 1] != n
            || tl.shape()[tl.rank() - 2] != n
        {
            return Err(Error::dim(format!(
                "tri_solve of {:?} with {:?}",
                tl.shape(),
                tb.shape()
            )));
        }
        let batch = tb.numel() / n.max(1);
        let mut out = vec![0.0; tb.numel()];
        for bi in 0..batch {
            let lb = &tl.data()[bi * n * n..(bi + 1) * n * n];
            let rhs = &tb.data()[bi * n..(bi + 1) * n];
            forward_sub(lb, rhs, &mut out[bi * n..(bi + 1) * n], n);
        }
        let needs = nodes[l.0].needs_grad || nodes[b.0].needs_grad;
        let shape = tb.shape().to_vec();
        drop(nodes);
        self.push(Tensor::from_parts(shape, out), Op::TriSolve(l.0, b.0), needs, "tri_solve")
    }

    /// Diagonal of each `[..., n, n]` block: `→ [..., n]`.
    pub fn diagonal(&self, a: Var) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let t = &nodes[a.0].value;
        if t.rank() < 2 || t.shape()[t.rank() - 1] != t.shape()[t.rank() - 2] {
            return Err(Error::dim(format!("diagonal of shape {:?}", t.shape())));
        }
        let (b, n, _) = batch_dims(t.shape());
        let mut out = Vec::with_capacity(b * n);
        for bi in 0..b {
            for i in 0..n {
                out.push(t.data()[bi * n * n + i * n + i]);
            }
        }
        let shape = t.shape()[..t.rank() - 1].to_vec();
        let needs = nodes[a.0].needs_grad;
        drop(nodes);
        self.push(Tensor::from_parts(shape, out), Op::Diagonal(a.0), needs, "diagonal")
    }

    // ---- backward -----------------------------------------------------

    /// Propagates adjoints from the scalar `loss` to every node. The tape is
    /// consumed: later calls to `backward` or to any op return a state error.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.consumed.replace(true) {
            return Err(Error::State("backward() called on a consumed tape".into()));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.numel() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let shapes: Vec<Vec<usize>> = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape(), 1.0));

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &node.op {
                Op::Leaf | Op::Constant => {
                    grads[id] = Some(g);
                }
                Op::Binary(op, a, b) => {
                    let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
                    let (na, nb) = (nodes[*a].needs_grad, nodes[*b].needs_grad);
                    let mut ga = na.then(|| vec![0.0; ta.numel()]);
                    let mut gb = nb.then(|| vec![0.0; tb.numel()]);
                    let (da, db, dg) = (ta.data(), tb.data(), g.data());
                    for_each_broadcast(g.shape(), ta.shape(), tb.shape(), |o, i, j| {
                        let (pa, pb) = match op {
                            BinaryOp::Add => (1.0, 1.0),
                            BinaryOp::Sub => (1.0, -1.0),
                            BinaryOp::Mul => (db[j], da[i]),
                            BinaryOp::Div => (1.0 / db[j], -da[i] / (db[j] * db[j])),
                        };
                        if let Some(ga) = ga.as_mut() {
                            ga[i] += dg[o] * pa;
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[j] += dg[o] * pb;
                        }
                    });
                    if let Some(ga) = ga {
                        accumulate(&mut grads, *a, Tensor::from_parts(ta.shape().to_vec(), ga));
                    }
                    if let Some(gb) = gb {
                        accumulate(&mut grads, *b, Tensor::from_parts(tb.shape().to_vec(), gb));
                    }
                }
                Op::Unary(op, a) => {
                    let x = &nodes[*a].value;
                    let gin: Vec<f64> = x
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .zip(g.data())
                        .map(|((&xi, &yi), &gi)| gi * op.derivative(xi, yi))
                        .collect();
                    accumulate(&mut grads, *a, Tensor::from_parts(x.shape().to_vec(), gin));
                }
                Op::SumAll(a) => {
                    let gv = g.data()[0];
                    accumulate(&mut grads, *a, Tensor::full(nodes[*a].value.shape(), gv));
                }
                Op::SumAxis(a, axis) => {
                    let shape = nodes[*a].value.shape();
                    let (outer, len, inner) = axis_split(shape, *axis);
                    let mut gin = vec![0.0; outer * len * inner];
                    for o in 0..outer {
                        for l in 0..len {
                            let base = (o * len + l) * inner;
                            gin[base..base + inner]
                                .copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::from_parts(shape.to_vec(), gin));
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
                    if nodes[*a].needs_grad {
                        let ga = matmul_tensors(&g, tb, false, true)?;
                        accumulate(&mut grads, *a, ga);
                    }
                    if nodes[*b].needs_grad {
                        let gb = matmul_tensors(ta, &g, true, false)?;
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Reshape(a) => {
                    let shape = nodes[*a].value.shape().to_vec();
                    accumulate(&mut grads, *a, g.reshaped(shape)?);
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads, *a, transpose_last(&g));
                }
                Op::Concat(parts, axis) => {
                    let (outer, total, inner) = axis_split(g.shape(), *axis);
                    let mut offset = 0;
                    for &p in parts {
                        let shape = nodes[p].value.shape();
                        let w = shape[*axis];
                        if nodes[p].needs_grad {
                            let mut gp = Vec::with_capacity(outer * w * inner);
                            for o in 0..outer {
                                let base = (o * total + offset) * inner;
                                gp.extend_from_slice(&g.data()[base..base + w * inner]);
                            }
                            accumulate(&mut grads, p, Tensor::from_parts(shape.to_vec(), gp));
                        }
                        offset += w;
                    }
                }
                Op::Slice { input, axis, start } => {
                    let shape = nodes[*input].value.shape();
                    let (outer, len, inner) = axis_split(shape, *axis);
                    let w = g.shape()[*axis];
                    let mut gin = vec![0.0; outer * len * inner];
                    for o in 0..outer {
                        let base = (o * len + start) * inner;
                        gin[base..base + w * inner]
                            .copy_from_slice(&g.data()[o * w * inner..(o + 1) * w * inner]);
                    }
                    accumulate(&mut grads, *input, Tensor::from_parts(shape.to_vec(), gin));
                }
                Op::Gather { input, index } => {
                    let shape = nodes[*input].value.shape();
                    let inner: usize = shape[1..].iter().product();
                    let mut gin = vec![0.0; nodes[*input].value.numel()];
                    for (r, &i) in index.iter().enumerate() {
                        let src = &g.data()[r * inner..(r + 1) * inner];
                        for (d, s) in gin[i * inner..(i + 1) * inner].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                    accumulate(&mut grads, *input, Tensor::from_parts(shape.to_vec(), gin));
                }
                Op::LorentzInner(a, b) => {
                    let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
                    let k = *ta.shape().last().unwrap();
                    let sign = |j: usize| if j % k == 0 { -1.0 } else { 1.0 };
                    if nodes[*a].needs_grad {
                        let ga: Vec<f64> = (0..ta.numel())
                            .map(|j| g.data()[j / k] * sign(j) * tb.data()[j])
                            .collect();
                        accumulate(&mut grads, *a, Tensor::from_parts(ta.shape().to_vec(), ga));
                    }
                    if nodes[*b].needs_grad {
                        let gb: Vec<f64> = (0..tb.numel())
                            .map(|j| g.data()[j / k] * sign(j) * ta.data()[j])
                            .collect();
                        accumulate(&mut grads, *b, Tensor::from_parts(tb.shape().to_vec(), gb));
                    }
                }
                Op::Cholesky(a) => {
                    let (b, n, _) = batch_dims(node.value.shape());
                    let mut gin = vec![0.0; node.value.numel()];
                    for bi in 0..b {
                        let r = bi * n * n..(bi + 1) * n * n;
                        chol_backward(
                            &node.value.data()[r.clone()],
                            &g.data()[r.clone()],
                            &mut gin[r],
                            n,
                        );
                    }
                    accumulate(
                        &mut grads,
                        *a,
                        Tensor::from_parts(node.value.shape().to_vec(), gin),
                    );
                }
                Op::TriSolve(l, b) => {
                    let tl = &nodes[*l].value;
                    let x = &node.value;
                    let n = *x.shape().last().unwrap();
                    let batch = x.numel() / n.max(1);
                    // b̄ = L⁻ᵀ x̄ ; L̄ = −tril(b̄ xᵀ)
                    let mut gb = vec![0.0; x.numel()];
                    for bi in 0..batch {
                        let lb = &tl.data()[bi * n * n..(bi + 1) * n * n];
                        back_sub_transposed(
                            lb,
                            &g.data()[bi * n..(bi + 1) * n],
                            &mut gb[bi * n..(bi + 1) * n],
                            n,
                        );
                    }
                    if nodes[*l].needs_grad {
                        let mut gl = vec![0.0; tl.numel()];
                        for bi in 0..batch {
                            for i in 0..n {
                                for j in 0..=i {
                                    gl[bi * n * n + i * n + j] =
                                        -gb[bi * n + i] * x.data()[bi * n + j];
                                }
                            }
                        }
                        accumulate(&mut grads, *l, Tensor::from_parts(tl.shape().to_vec(), gl));
                    }
                    if nodes[*b].needs_grad {
                        accumulate(&mut grads, *b, Tensor::from_parts(x.shape().to_vec(), gb));
                    }
                }
                Op::Diagonal(a) => {
                    let shape = nodes[*a].value.shape();
                    let (b, n, _) = batch_dims(shape);
                    let mut gin = vec![0.0; b * n * n];
                    for bi in 0..b {
                        for i in 0..n {
                            gin[bi * n * n + i * n + i] = g.data()[bi * n + i];
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::from_parts(shape.to_vec(), gin));
                }
            }
        }
        for (i, gr) in grads.iter().enumerate() {
            if let Some(t) = gr {
                if !t.is_finite() {
                    log::debug!("non-finite gradient at node {i}");
                    return Err(Error::Numeric { op: "backward" });
                }
            }
        }
        grads.resize(nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }
}

fn sv_with_rows(out_shape: &[usize]) -> Vec<usize> {
    out_shape[..out_shape.len() - 1].to_vec()
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn transpose_last(t: &Tensor) -> Tensor {
    let (b, m, k) = batch_dims(t.shape());
    let mut out = vec![0.0; t.numel()];
    for bi in 0..b {
        for i in 0..m {
            for j in 0..k {
                out[bi * m * k + j * m + i] = t.data()[bi * m * k + i * k + j];
            }
        }
    }
    let mut shape = t.shape().to_vec();
    let r = shape.len();
    shape.swap(r - 1, r - 2);
    Tensor::from_parts(shape, out)
}

/// `op(a)·op(b)` for rank-2 or equal-batch rank-3 tensors, where `op`
/// optionally transposes the last two axes.
fn matmul_tensors(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Result<Tensor> {
    if a.rank() != b.rank() || !(a.rank() == 2 || a.rank() == 3) {
        return Err(Error::dim(format!("matmul of {:?} and {:?}", a.shape(), b.shape())));
    }
    let (ba, ra, ca) = batch_dims(a.shape());
    let (bb, rb, cb) = batch_dims(b.shape());
    let (m, k) = if ta { (ca, ra) } else { (ra, ca) };
    let (k2, n) = if tb { (cb, rb) } else { (rb, cb) };
    if ba != bb || k != k2 {
        return Err(Error::dim(format!(
            "matmul of {:?}{} and {:?}{}",
            a.shape(),
            if ta { "ᵀ" } else { "" },
            b.shape(),
            if tb { "ᵀ" } else { "" }
        )));
    }
    let mut out = vec![0.0; ba * m * n];
    let (da, db) = (a.data(), b.data());
    for bi in 0..ba {
        let ao = bi * ra * ca;
        let bo = bi * rb * cb;
        let oo = bi * m * n;
        for i in 0..m {
            let dst = &mut out[oo + i * n..oo + (i + 1) * n];
            for p in 0..k {
                let av = if ta { da[ao + p * ca + i] } else { da[ao + i * ca + p] };
                if av == 0.0 {
                    continue;
                }
                if tb {
                    for (j, d) in dst.iter_mut().enumerate() {
                        *d += av * db[bo + j * cb + p];
                    }
                } else {
                    let row = &db[bo + p * cb..bo + (p + 1) * cb];
                    for (d, &bv) in dst.iter_mut().zip(row) {
                        *d += av * bv;
                    }
                }
            }
        }
    }
    let mut shape = a.shape()[..a.rank() - 2].to_vec();
    shape.push(m);
    shape.push(n);
    Ok(Tensor::from_parts(shape, out))
}

fn chol_block(src: &[f64], l: &mut [f64], n: usize) -> Result<()> {
    let sym = |i: usize, j: usize| 0.5 * (src[i * n + j] + src[j * n + i]);
    for j in 0..n {
        let mut d = sym(j, j);
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) {
            return Err(Error::NumericDetail(format!(
                "cholesky: matrix not positive definite (pivot {j} = {d:e})"
            )));
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in j + 1..n {
            let mut s = sym(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / djj;
        }
    }
    Ok(())
}

/// `L x = b`.
fn forward_sub(l: &[f64], b: &[f64], x: &mut [f64], n: usize) {
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[i * n + j] * x[j];
        }
        x[i] = s / l[i * n + i];
    }
}

/// `Lᵀ x = b`.
fn back_sub_transposed(l: &[f64], b: &[f64], x: &mut [f64], n: usize) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= l[j * n + i] * x[j];
        }
        x[i] = s / l[i * n + i];
    }
}

/// Adjoint of `L = chol(sym(A))`: with `C = Φ(Lᵀ L̄)` (lower triangle, halved
/// diagonal) and `G = L⁻ᵀ C L⁻¹`, returns `Ā = (G + Gᵀ)/2`.
fn chol_backward(l: &[f64], gl: &[f64], out: &mut [f64], n: usize) {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for k in i.max(j)..n {
                // (Lᵀ L̄)_{ij} = Σ_k L_{ki} L̄_{kj}
                s += l[k * n + i] * gl[k * n + j];
            }
            c[i * n + j] = if i == j { 0.5 * s } else { s };
        }
    }
    // Y = L⁻ᵀ C, column by column
    let mut y = vec![0.0; n * n];
    let mut col = vec![0.0; n];
    let mut sol = vec![0.0; n];
    for j in 0..n {
        for i in 0..n {
            col[i] = c[i * n + j];
        }
        back_sub_transposed(l, &col, &mut sol, n);
        for i in 0..n {
            y[i * n + j] = sol[i];
        }
    }
    // G = Y L⁻¹  ⇔  Gᵀ = L⁻ᵀ Yᵀ
    let mut gt = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            col[i] = y[j * n + i];
        }
        back_sub_transposed(l, &col, &mut sol, n);
        for i in 0..n {
            gt[i * n + j] = sol[i];
        }
    }
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = 0.5 * (gt[i * n + j] + gt[j * n + i]);
        }
    }
}
