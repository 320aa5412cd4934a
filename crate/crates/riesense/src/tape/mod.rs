//! Minimal reverse-mode differentiation over the operation set used by the
//! model, so curvature and all weights are trainable without an external ML
//! framework.
//!
//! A [`Tape`] is an append-only trace: recording an operation computes its
//! forward value immediately, and [`Tape::backward`] runs one reverse sweep
//! over the trace, accumulating adjoints. Nodes hold scalars, vectors or
//! row-major matrices. Control flow happens at record time — callers may
//! branch on forward values and record only the taken branch, which gives
//! subgradients at branch points.
//!
//! Two boundary conventions keep training free of infinite gradients:
//! `atanh` arguments are clamped to `±(1 − 1e-12)` with partial 0 once the
//! clamp is active, and the fused clamp-arcosh primitive returns subgradient
//! 0 when its `max(z, 1)` clamp is active, evaluating the derivative at
//! `max(z, 1 + 1e-7)` otherwise.

mod params;

pub use params::{Adam, AdamConfig, ParamId, ParamStore};

use crate::scalar::{atanh_bound, degenerate_denom, Real};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TapeError {
    #[error("tape contract violation in {op}: {detail}")]
    Contract { op: &'static str, detail: String },
    #[error("degenerate value in {op}: {detail}")]
    Degenerate { op: &'static str, detail: String },
}

pub type TapeResult<T> = Result<T, TapeError>;

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Dense value attached to a tape node.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Shape,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn scalar(v: F) -> Self {
        Self {
            shape: Shape::Scalar,
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<F>) -> Self {
        Self {
            shape: Shape::Vector(data.len()),
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self {
            shape: Shape::Matrix(rows, cols),
            data,
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![F::zero(); shape.len()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a scalar node.
    pub fn item(&self) -> F {
        debug_assert_eq!(self.shape, Shape::Scalar);
        self.data[0]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, F> {
        self.data.iter()
    }
}

#[derive(Debug, Clone)]
enum Op<F> {
    /// Differentiable input (parameter or data we want gradients for).
    Leaf,
    /// Non-differentiable input; skipped by the backward sweep.
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Neg(NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    AddConst(NodeId, F),
    Scale(NodeId, F),
    /// Elementwise product of a tensor and a scalar node.
    MulScalar(NodeId, NodeId),
    Dot(NodeId, NodeId),
    Norm(NodeId),
    Sum(NodeId),
    Tanh(NodeId),
    Atanh(NodeId),
    /// `tanh(u)/u`, smooth through zero.
    Tanhc(NodeId),
    /// `atanh(u)/u`, smooth through zero, argument clamped.
    Atanhc(NodeId),
    /// Fused `arcosh(max(z, 1))`.
    AcoshClamped(NodeId),
    Sqrt(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Softplus(NodeId),
    MaxConst(NodeId, F),
    MinConst(NodeId, F),
    /// Row-stabilized softmax of a vector.
    Softmax(NodeId),
    /// Matrix (r×k) times vector (k) → vector (r).
    MatVec(NodeId, NodeId),
    /// Row vector (k) times matrix (k×n) → vector (n).
    VecMat(NodeId, NodeId),
    /// Matrix (m×k) times matrix (k×n) → matrix (m×n).
    Matmul(NodeId, NodeId),
    Concat(Vec<NodeId>),
    Index(NodeId, usize),
    /// Contiguous sub-vector `[start, start+len)`.
    Slice(NodeId, usize, usize),
    /// Stack equal-length vectors as matrix rows.
    StackRows(Vec<NodeId>),
}

/// Append-only computation trace with per-node forward values.
pub struct Tape<F> {
    ops: Vec<Op<F>>,
    values: Vec<Tensor<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self {
            ops: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.values[id.0]
    }

    fn push(&mut self, op: Op<F>, value: Tensor<F>) -> NodeId {
        self.ops.push(op);
        self.values.push(value);
        NodeId(self.values.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<F>) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> NodeId {
        self.push(Op::Constant, value)
    }

    pub fn scalar_leaf(&mut self, v: F) -> NodeId {
        self.leaf(Tensor::scalar(v))
    }

    pub fn scalar_const(&mut self, v: F) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Shape {
        let sa = self.values[a.0].shape();
        let sb = self.values[b.0].shape();
        assert_eq!(sa, sb, "{op}: shape mismatch {sa:?} vs {sb:?}");
        sa
    }

    fn zip_map(&mut self, op: Op<F>, a: NodeId, b: NodeId, f: impl Fn(F, F) -> F) -> NodeId {
        let shape = match &op {
            Op::Add(..) => self.same_shape("add", a, b),
            Op::Sub(..) => self.same_shape("sub", a, b),
            Op::Mul(..) => self.same_shape("mul", a, b),
            Op::Div(..) => self.same_shape("div", a, b),
            _ => unreachable!(),
        };
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(op, Tensor { shape, data })
    }

    fn unary_map(&mut self, op: Op<F>, a: NodeId, f: impl Fn(F) -> F) -> NodeId {
        let shape = self.values[a.0].shape();
        let data = self.values[a.0].data().iter().map(|&x| f(x)).collect();
        self.push(op, Tensor { shape, data })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_map(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_map(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.unary_map(Op::Neg(a), a, |x| -x)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_map(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    /// Elementwise division. Any denominator entry below `1e-12` in magnitude
    /// is a degenerate configuration.
    pub fn div(&mut self, a: NodeId, b: NodeId) -> TapeResult<NodeId> {
        let thresh = degenerate_denom::<F>();
        if let Some(&bad) = self.values[b.0].data().iter().find(|v| v.abs() < thresh) {
            return Err(TapeError::Degenerate {
                op: "div",
                detail: format!("denominator entry {bad} below {thresh}"),
            });
        }
        Ok(self.zip_map(Op::Div(a, b), a, b, |x, y| x / y))
    }

    pub fn add_const(&mut self, a: NodeId, k: F) -> NodeId {
        self.unary_map(Op::AddConst(a, k), a, |x| x + k)
    }

    pub fn scale(&mut self, a: NodeId, k: F) -> NodeId {
        self.unary_map(Op::Scale(a, k), a, |x| x * k)
    }

    /// Multiply every entry of `a` by the scalar node `s`.
    pub fn mul_scalar(&mut self, a: NodeId, s: NodeId) -> NodeId {
        assert_eq!(
            self.values[s.0].shape(),
            Shape::Scalar,
            "mul_scalar: second operand must be scalar"
        );
        let sv = self.values[s.0].item();
        self.unary_map(Op::MulScalar(a, s), a, |x| x * sv)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let sa = self.values[a.0].shape();
        self.same_shape("dot", a, b);
        assert!(matches!(sa, Shape::Vector(_)), "dot: vector operands required");
        let v = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(&x, &y)| x * y)
            .sum();
        self.push(Op::Dot(a, b), Tensor::scalar(v))
    }

    pub fn norm(&mut self, a: NodeId) -> NodeId {
        let v = self.values[a.0]
            .data()
            .iter()
            .map(|&x| x * x)
            .sum::<F>()
            .sqrt();
        self.push(Op::Norm(a), Tensor::scalar(v))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = self.values[a.0].data().iter().copied().sum();
        self.push(Op::Sum(a), Tensor::scalar(v))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary_map(Op::Tanh(a), a, |x| x.tanh())
    }

    pub fn atanh(&mut self, a: NodeId) -> NodeId {
        let b = atanh_bound::<F>();
        self.unary_map(Op::Atanh(a), a, |x| x.max(-b).min(b).atanh())
    }

    pub fn tanhc(&mut self, a: NodeId) -> NodeId {
        self.unary_map(Op::Tanhc(a), a, tanhc_value)
    }

    pub fn atanhc(&mut self, a: NodeId) -> NodeId {
        self.unary_map(Op::Atanhc(a), a, atanhc_value)
    }

    /// `arcosh(max(z, 1))`: the sole gateway to `arcosh` on the tape, so the
    /// domain clamp can never be bypassed.
    pub fn acosh_clamped(&mut self, a: NodeId) -> NodeId {
        self.unary_map(Op::AcoshClamped(a), a, |x| x.max(F::one()).acosh())
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.unary_map(Op::Sqrt(a), a, |x| x.sqrt())
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary_map(Op::Exp(a), a, |x| x.exp())
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.unary_map(Op::Ln(a), a, |x| x.ln())
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary_map(Op::Softplus(a), a, crate::geometry::softplus)
    }

    pub fn max_const(&mut self, a: NodeId, k: F) -> NodeId {
        self.unary_map(Op::MaxConst(a, k), a, |x| x.max(k))
    }

    pub fn min_const(&mut self, a: NodeId, k: F) -> NodeId {
        self.unary_map(Op::MinConst(a, k), a, |x| x.min(k))
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let input = self.values[a.0].data();
        assert!(
            matches!(self.values[a.0].shape(), Shape::Vector(_)),
            "softmax: vector operand required"
        );
        let max = input.iter().copied().fold(F::neg_infinity(), F::max);
        let exps: Vec<F> = input.iter().map(|&x| (x - max).exp()).collect();
        let total: F = exps.iter().copied().sum();
        let data: Vec<F> = exps.into_iter().map(|e| e / total).collect();
        self.push(Op::Softmax(a), Tensor::vector(data))
    }

    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> NodeId {
        let (rows, cols) = match self.values[m.0].shape() {
            Shape::Matrix(r, c) => (r, c),
            s => panic!("matvec: matrix operand required, got {s:?}"),
        };
        match self.values[v.0].shape() {
            Shape::Vector(n) if n == cols => {}
            s => panic!("matvec: vector of dim {cols} required, got {s:?}"),
        }
        let md = self.values[m.0].data();
        let vd = self.values[v.0].data();
        let mut out = vec![F::zero(); rows];
        for r in 0..rows {
            let row = &md[r * cols..(r + 1) * cols];
            out[r] = row.iter().zip(vd).map(|(&a, &b)| a * b).sum();
        }
        self.push(Op::MatVec(m, v), Tensor::vector(out))
    }

    pub fn vecmat(&mut self, v: NodeId, m: NodeId) -> NodeId {
        let (rows, cols) = match self.values[m.0].shape() {
            Shape::Matrix(r, c) => (r, c),
            s => panic!("vecmat: matrix operand required, got {s:?}"),
        };
        match self.values[v.0].shape() {
            Shape::Vector(n) if n == rows => {}
            s => panic!("vecmat: vector of dim {rows} required, got {s:?}"),
        }
        let md = self.values[m.0].data();
        let vd = self.values[v.0].data();
        let mut out = vec![F::zero(); cols];
        for (r, &vr) in vd.iter().enumerate() {
            let row = &md[r * cols..(r + 1) * cols];
            for (o, &mrc) in out.iter_mut().zip(row) {
                *o += vr * mrc;
            }
        }
        self.push(Op::VecMat(v, m), Tensor::vector(out))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, ka) = match self.values[a.0].shape() {
            Shape::Matrix(r, c) => (r, c),
            s => panic!("matmul: matrix operands required, got {s:?}"),
        };
        let (kb, n) = match self.values[b.0].shape() {
            Shape::Matrix(r, c) => (r, c),
            s => panic!("matmul: matrix operands required, got {s:?}"),
        };
        assert_eq!(ka, kb, "matmul: inner dimensions differ");
        let ad = self.values[a.0].data();
        let bd = self.values[b.0].data();
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            for k in 0..ka {
                let aik = ad[i * ka + k];
                let brow = &bd[k * n..(k + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &bkj) in orow.iter_mut().zip(brow) {
                    *o += aik * bkj;
                }
            }
        }
        self.push(Op::Matmul(a, b), Tensor::matrix(m, n, out))
    }

    /// Concatenate scalar and vector nodes into one vector.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut data = Vec::new();
        for &p in parts {
            assert!(
                !matches!(self.values[p.0].shape(), Shape::Matrix(..)),
                "concat: scalar or vector parts required"
            );
            data.extend_from_slice(self.values[p.0].data());
        }
        self.push(Op::Concat(parts.to_vec()), Tensor::vector(data))
    }

    pub fn index(&mut self, a: NodeId, i: usize) -> NodeId {
        let v = self.values[a.0].data()[i];
        self.push(Op::Index(a, i), Tensor::scalar(v))
    }

    pub fn stack_rows(&mut self, rows: &[NodeId]) -> NodeId {
        assert!(!rows.is_empty(), "stack_rows: at least one row required");
        let n = match self.values[rows[0].0].shape() {
            Shape::Vector(n) => n,
            s => panic!("stack_rows: vector rows required, got {s:?}"),
        };
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            assert_eq!(
                self.values[r.0].shape(),
                Shape::Vector(n),
                "stack_rows: rows must share length"
            );
            data.extend_from_slice(self.values[r.0].data());
        }
        self.push(Op::StackRows(rows.to_vec()), Tensor::matrix(rows.len(), n, data))
    }

    /// Mean of all entries.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.values[a.0].len();
        let s = self.sum(a);
        self.scale(s, F::one() / F::of(n as f64))
    }

    /// Reverse sweep from a scalar `output`. Returns one adjoint tensor per
    /// node; leaves hold `∂output/∂leaf`.
    pub fn backward(&self, output: NodeId) -> TapeResult<Vec<Tensor<F>>> {
        if self.values[output.0].shape() != Shape::Scalar {
            return Err(TapeError::Contract {
                op: "backward",
                detail: format!(
                    "output must be scalar, got {:?}",
                    self.values[output.0].shape()
                ),
            });
        }
        let mut adj: Vec<Tensor<F>> = self
            .values
            .iter()
            .map(|v| Tensor::zeros(v.shape()))
            .collect();
        adj[output.0].data[0] = F::one();

        for idx in (0..=output.0).rev() {
            if adj[idx].data.iter().all(|&g| g == F::zero()) {
                continue;
            }
            let g = adj[idx].clone();
            match &self.ops[idx] {
                Op::Leaf | Op::Constant => {}
                Op::Add(a, b) => {
                    acc(&mut adj[a.0], g.data(), F::one());
                    acc(&mut adj[b.0], g.data(), F::one());
                }
                Op::Sub(a, b) => {
                    acc(&mut adj[a.0], g.data(), F::one());
                    acc(&mut adj[b.0], g.data(), -F::one());
                }
                Op::Neg(a) => acc(&mut adj[a.0], g.data(), -F::one()),
                Op::Mul(a, b) => {
                    let (av, bv) = (self.values[a.0].data(), self.values[b.0].data());
                    acc_prod(&mut adj[a.0], g.data(), bv);
                    let _ = av;
                    acc_prod(&mut adj[b.0], g.data(), self.values[a.0].data());
                }
                Op::Div(a, b) => {
                    let bv = self.values[b.0].data();
                    let yv = self.values[idx].data();
                    for (i, (&gi, (&bi, &yi))) in
                        g.data().iter().zip(bv.iter().zip(yv)).enumerate()
                    {
                        adj[a.0].data[i] += gi / bi;
                        adj[b.0].data[i] -= gi * yi / bi;
                    }
                }
                Op::AddConst(a, _) => acc(&mut adj[a.0], g.data(), F::one()),
                Op::Scale(a, k) => acc(&mut adj[a.0], g.data(), *k),
                Op::MulScalar(a, s) => {
                    let sv = self.values[s.0].item();
                    acc(&mut adj[a.0], g.data(), sv);
                    let d: F = g
                        .data()
                        .iter()
                        .zip(self.values[a.0].data())
                        .map(|(&gi, &ai)| gi * ai)
                        .sum();
                    adj[s.0].data[0] += d;
                }
                Op::Dot(a, b) => {
                    let gs = g.item();
                    acc(&mut adj[a.0], self.values[b.0].data(), gs);
                    acc(&mut adj[b.0], self.values[a.0].data(), gs);
                }
                Op::Norm(a) => {
                    let n = self.values[idx].item();
                    if n > F::zero() {
                        let gs = g.item() / n;
                        acc(&mut adj[a.0], self.values[a.0].data(), gs);
                    }
                }
                Op::Sum(a) => {
                    let gs = g.item();
                    for d in adj[a.0].data.iter_mut() {
                        *d += gs;
                    }
                }
                Op::Tanh(a) => {
                    let yv = self.values[idx].data();
                    for (i, (&gi, &yi)) in g.data().iter().zip(yv).enumerate() {
                        adj[a.0].data[i] += gi * (F::one() - yi * yi);
                    }
                }
                Op::Atanh(a) => {
                    let bnd = atanh_bound::<F>();
                    let xv = self.values[a.0].data();
                    for (i, (&gi, &xi)) in g.data().iter().zip(xv).enumerate() {
                        if xi.abs() < bnd {
                            adj[a.0].data[i] += gi / (F::one() - xi * xi);
                        }
                    }
                }
                Op::Tanhc(a) => {
                    let xv = self.values[a.0].data();
                    for (i, (&gi, &xi)) in g.data().iter().zip(xv).enumerate() {
                        adj[a.0].data[i] += gi * tanhc_deriv(xi);
                    }
                }
                Op::Atanhc(a) => {
                    let xv = self.values[a.0].data();
                    for (i, (&gi, &xi)) in g.data().iter().zip(xv).enumerate() {
                        adj[a.0].data[i] += gi * atanhc_deriv(xi);
                    }
                }
                Op::AcoshClamped(a) => {
                    let xv = self.values[a.0].data();
                    for (i, (&gi, &xi)) in g.data().iter().zip(xv).enumerate() {
                        if xi > F::one() {
                            let z = xi.max(F::one() + F::of(1e-7));
                            adj[a.0].data[i] += gi / (z * z - F::one()).sqrt();
                        }
                    }
                }
                Op::Sqrt(a) => {
                    let yv = self.values[idx].data();
                    for (i, (&gi, &yi)) in g.data().iter().zip(yv).enumerate() {
                        if yi > F::zero() {
                            adj[a.0].data[i] += gi / (F::of(2.0) * yi);
                        }
                    }
                }
                Op::Exp(a) => {
                    let yv = self.values[idx].data();
                    for (i, (&gi, &yi)) in g.data().iter().zip(yv).enumerate() {
                        adj[a.0].data[i] += gi * yi;
                    }
                }
                Op::Ln(a) => {
                    let xv = self.values[a.0].data();
                    for (i, (&gi, &xi)) in g.data().iter().zip(xv).enumerate() {
                        adj[a.0].data[i] += gi / xi;
                    }
                }
                Op::Softplus(a) => {
                    let xv = self.values[a.0].data();
                    for (i, (&gi, &xi)) in g.data().iter().zip(xv).enumerate() {
                        let s = if xi > F::zero() {
                            F::one() / (F::one() + (-xi).exp())
                        } else {
                            let e = xi.exp();
                            e / (F::one() + e)
                        };
                        adj[a.0].data[i] += gi * s;
                    }
                }
                Op::MaxConst(a, k) => {
                    let xv = self.values[a.0].data();
                    for (i, (&gi, &xi)) in g.data().iter().zip(xv).enumerate() {
                        if xi > *k {
                            adj[a.0].data[i] += gi;
                        }
                    }
                }
                Op::MinConst(a, k) => {
                    let xv = self.values[a.0].data();
                    for (i, (&gi, &xi)) in g.data().iter().zip(xv).enumerate() {
                        if xi < *k {
                            adj[a.0].data[i] += gi;
                        }
                    }
                }
                Op::Softmax(a) => {
                    let s = self.values[idx].data();
                    let inner: F = g.data().iter().zip(s).map(|(&gi, &si)| gi * si).sum();
                    for (i, (&gi, &si)) in g.data().iter().zip(s).enumerate() {
                        adj[a.0].data[i] += si * (gi - inner);
                    }
                }
                Op::MatVec(m, v) => {
                    let (rows, cols) = match self.values[m.0].shape() {
                        Shape::Matrix(r, c) => (r, c),
                        _ => unreachable!(),
                    };
                    let md = self.values[m.0].data();
                    let vd = self.values[v.0].data();
                    for r in 0..rows {
                        let gr = g.data()[r];
                        if gr == F::zero() {
                            continue;
                        }
                        let mrow = &md[r * cols..(r + 1) * cols];
                        let arow = &mut adj[m.0].data[r * cols..(r + 1) * cols];
                        for ((am, &vi), &mi) in arow.iter_mut().zip(vd).zip(mrow) {
                            *am += gr * vi;
                            let _ = mi;
                        }
                        for (av, &mi) in adj[v.0].data.iter_mut().zip(mrow) {
                            *av += gr * mi;
                        }
                    }
                }
                Op::VecMat(v, m) => {
                    let (rows, cols) = match self.values[m.0].shape() {
                        Shape::Matrix(r, c) => (r, c),
                        _ => unreachable!(),
                    };
                    let md = self.values[m.0].data();
                    let vd = self.values[v.0].data();
                    for r in 0..rows {
                        let mrow = &md[r * cols..(r + 1) * cols];
                        let dv: F = g.data().iter().zip(mrow).map(|(&gi, &mi)| gi * mi).sum();
                        adj[v.0].data[r] += dv;
                        let vr = vd[r];
                        let arow = &mut adj[m.0].data[r * cols..(r + 1) * cols];
                        for (am, &gi) in arow.iter_mut().zip(g.data()) {
                            *am += vr * gi;
                        }
                    }
                }
                Op::Matmul(a, b) => {
                    let (m, k) = match self.values[a.0].shape() {
                        Shape::Matrix(r, c) => (r, c),
                        _ => unreachable!(),
                    };
                    let n = match self.values[b.0].shape() {
                        Shape::Matrix(_, c) => c,
                        _ => unreachable!(),
                    };
                    let ad = self.values[a.0].data();
                    let bd = self.values[b.0].data();
                    // dA += G·Bᵀ, dB += Aᵀ·G
                    for i in 0..m {
                        for kk in 0..k {
                            let mut s = F::zero();
                            let grow = &g.data()[i * n..(i + 1) * n];
                            let brow = &bd[kk * n..(kk + 1) * n];
                            for (&gi, &bi) in grow.iter().zip(brow) {
                                s += gi * bi;
                            }
                            adj[a.0].data[i * k + kk] += s;
                        }
                    }
                    for kk in 0..k {
                        for i in 0..m {
                            let aik = ad[i * k + kk];
                            if aik == F::zero() {
                                continue;
                            }
                            let grow = &g.data()[i * n..(i + 1) * n];
                            let brow = &mut adj[b.0].data[kk * n..(kk + 1) * n];
                            for (bo, &gi) in brow.iter_mut().zip(grow) {
                                *bo += aik * gi;
                            }
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.values[p.0].len();
                        acc(&mut adj[p.0], &g.data()[offset..offset + len], F::one());
                        offset += len;
                    }
                }
                Op::Index(a, i) => {
                    adj[a.0].data[*i] += g.item();
                }
                Op::StackRows(rows) => {
                    let n = self.values[rows[0].0].len();
                    for (r, &row) in rows.iter().enumerate() {
                        acc(&mut adj[row.0], &g.data()[r * n..(r + 1) * n], F::one());
                    }
                }
            }
        }
        Ok(adj)
    }
}

fn acc<F: Real>(target: &mut Tensor<F>, src: &[F], scale: F) {
    for (t, &s) in target.data.iter_mut().zip(src) {
        *t += s * scale;
    }
}

fn acc_prod<F: Real>(target: &mut Tensor<F>, g: &[F], other: &[F]) {
    for (t, (&gi, &oi)) in target.data.iter_mut().zip(g.iter().zip(other)) {
        *t += gi * oi;
    }
}

fn tanhc_value<F: Real>(u: F) -> F {
    if u.abs() < F::of(1e-4) {
        F::one() - u * u / F::of(3.0)
    } else {
        u.tanh() / u
    }
}

fn tanhc_deriv<F: Real>(u: F) -> F {
    if u.abs() < F::of(1e-4) {
        -F::of(2.0) * u / F::of(3.0)
    } else {
        let t = u.tanh();
        (F::one() - t * t) / u - t / (u * u)
    }
}

fn atanhc_value<F: Real>(u: F) -> F {
    let bnd = atanh_bound::<F>();
    if u.abs() < F::of(1e-4) {
        F::one() + u * u / F::of(3.0)
    } else {
        u.max(-bnd).min(bnd).atanh() / u
    }
}

fn atanhc_deriv<F: Real>(u: F) -> F {
    let bnd = atanh_bound::<F>();
    if u.abs() >= bnd {
        F::zero()
    } else if u.abs() < F::of(1e-4) {
        F::of(2.0) * u / F::of(3.0)
    } else {
        F::one() / ((F::one() - u * u) * u) - u.atanh() / (u * u)
    }
}
