use std::sync::Arc;

use super::matrix::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Matrix};
use crate::error::{Error, Result};

/// Rows below this Euclidean norm are rejected by [`Tape::row_l2_normalize`].
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

impl TensorId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Sparse linear map acting on the rows of a matrix: output row `r` is
/// `Σ w · input[i]` over the `(i, w)` entries of `rows[r]`. An empty entry
/// list yields a zero row.
///
/// Neighbor averaging, mean readout per graph and mixup interpolation are all
/// expressed with this.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRows {
    input_rows: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn new(input_rows: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        for (r, entries) in rows.iter().enumerate() {
            for &(i, w) in entries {
                if i >= input_rows {
                    return Err(Error::InvalidArgument(format!(
                        "sparse row {r} references input row {i} of {input_rows}"
                    )));
                }
                if !w.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "sparse row {r} has non-finite weight"
                    )));
                }
            }
        }
        Ok(SparseRows { input_rows, rows })
    }

    /// Each output row is the unweighted mean of the listed input rows.
    pub fn means(input_rows: usize, groups: &[Vec<usize>]) -> Result<Self> {
        let rows = groups
            .iter()
            .map(|g| {
                let w = if g.is_empty() { 0.0 } else { 1.0 / g.len() as f64 };
                g.iter().map(|&i| (i, w)).collect()
            })
            .collect();
        SparseRows::new(input_rows, rows)
    }

    pub fn input_rows(&self) -> usize {
        self.input_rows
    }

    pub fn output_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn apply(&self, a: &Matrix) -> Matrix {
        let cols = a.cols();
        let mut out = Matrix::zeros(self.rows.len(), cols);
        for (r, entries) in self.rows.iter().enumerate() {
            let orow = out.row_mut(r);
            for &(i, w) in entries {
                for (o, v) in orow.iter_mut().zip(a.row(i)) {
                    *o += w * v;
                }
            }
        }
        out
    }

    fn apply_transpose_acc(&self, g: &Matrix, out: &mut Matrix) {
        for (r, entries) in self.rows.iter().enumerate() {
            let grow = g.row(r);
            for &(i, w) in entries {
                for (o, v) in out.row_mut(i).iter_mut().zip(grow) {
                    *o += w * v;
                }
            }
        }
    }
}

type ElementFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

enum Op {
    Leaf,
    MatMul(TensorId, TensorId),
    MatMulNt(TensorId, TensorId),
    Transpose(TensorId),
    Add(TensorId, TensorId),
    AddRowBroadcast(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, f64),
    Relu(TensorId),
    Map(TensorId, ElementFn),
    MeanRows(TensorId),
    Sum(TensorId),
    ConcatRows(TensorId, TensorId),
    RowL2Normalize(TensorId, Vec<f64>),
    LogSumExpRow(TensorId),
    SparseRows(TensorId, Arc<SparseRows>),
    Gather(TensorId, Vec<(usize, usize)>),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run reverse-mode tape over dense matrices.
///
/// Values are appended in evaluation order, so every node's inputs precede
/// it and a single reverse sweep computes all gradients. A tape is meant to
/// live for one forward/backward pass and then be dropped.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> TensorId {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> TensorId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: TensorId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Scalar read-out of a 1×1 tensor.
    pub fn scalar(&self, id: TensorId) -> f64 {
        let v = &self.nodes[id.0].value;
        debug_assert_eq!(v.shape(), (1, 1));
        v[(0, 0)]
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Gradient accumulated by the last [`Tape::backward`] call.
    pub fn grad(&self, id: TensorId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Copy of `a`'s value with the gradient path cut.
    pub fn detach(&mut self, a: TensorId) -> TensorId {
        let v = self.nodes[a.0].value.clone();
        self.constant(v)
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> TensorId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        value: Matrix,
        op: Op,
        inputs: &[TensorId],
    ) -> Result<TensorId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        Ok(self.push(value, op, requires_grad))
    }

    fn shape(&self, id: TensorId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    fn same_shape(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                lhs: sa,
                rhs: sb,
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push_checked("matmul", v, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`, e.g. the pairwise similarity matrix of row embeddings.
    pub fn matmul_nt(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                lhs: va.shape(),
                rhs: vb.shape(),
            });
        }
        let mut out = Matrix::zeros(va.rows(), vb.rows());
        gemm_nt_acc(va, vb, &mut out);
        self.push_checked("matmul_nt", out, Op::MatMulNt(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        let v = self.value(a).transpose();
        self.push_checked("transpose", v, Op::Transpose(a), &[a])
    }

    /// Elementwise sum. A `1×n` right operand is broadcast over the rows of
    /// an `m×n` left operand.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            let mut v = self.value(a).clone();
            v.add_assign(self.value(b));
            return self.push_checked("add", v, Op::Add(a, b), &[a, b]);
        }
        if sb.0 == 1 && sb.1 == sa.1 {
            let mut v = self.value(a).clone();
            let bias = self.value(b).row(0).to_vec();
            for r in 0..sa.0 {
                for (x, bv) in v.row_mut(r).iter_mut().zip(&bias) {
                    *x += bv;
                }
            }
            return self.push_checked("add", v, Op::AddRowBroadcast(a, b), &[a, b]);
        }
        Err(Error::ShapeMismatch {
            op: "add",
            lhs: sa,
            rhs: sb,
        })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("sub", a, b)?;
        let mut v = self.value(a).clone();
        for (x, y) in v.as_mut_slice().iter_mut().zip(self.value(b).as_slice()) {
            *x -= y;
        }
        self.push_checked("sub", v, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("mul", a, b)?;
        let mut v = self.value(a).clone();
        for (x, y) in v.as_mut_slice().iter_mut().zip(self.value(b).as_slice()) {
            *x *= y;
        }
        self.push_checked("mul", v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        let mut v = self.value(a).clone();
        v.scale_assign(c);
        self.push_checked("scale", v, Op::Scale(a, c), &[a])
    }

    /// ReLU with subgradient 0 at the kink.
    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        let mut v = self.value(a).clone();
        for x in v.as_mut_slice() {
            if *x < 0.0 {
                *x = 0.0;
            }
        }
        self.push_checked("relu", v, Op::Relu(a), &[a])
    }

    /// Elementwise map with a caller-supplied derivative.
    pub fn map<F, D>(&mut self, a: TensorId, f: F, df: D) -> Result<TensorId>
    where
        F: Fn(f64) -> f64,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let mut v = self.value(a).clone();
        for x in v.as_mut_slice() {
            *x = f(*x);
        }
        self.push_checked("map", v, Op::Map(a, Arc::new(df)), &[a])
    }

    /// Column-wise mean over rows: `m×n → 1×n`.
    pub fn mean_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let va = self.value(a);
        if va.rows() == 0 {
            return Err(Error::InvalidArgument("mean_rows of empty matrix".into()));
        }
        let mut out = Matrix::zeros(1, va.cols());
        for r in 0..va.rows() {
            for (o, x) in out.row_mut(0).iter_mut().zip(va.row(r)) {
                *o += x;
            }
        }
        out.scale_assign(1.0 / va.rows() as f64);
        self.push_checked("mean_rows", out, Op::MeanRows(a), &[a])
    }

    /// Sum of all entries: `m×n → 1×1`.
    pub fn sum(&mut self, a: TensorId) -> Result<TensorId> {
        let s = self.value(a).sum();
        self.push_checked("sum", Matrix::scalar(s), Op::Sum(a), &[a])
    }

    pub fn concat_rows(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(Error::ShapeMismatch {
                op: "concat_rows",
                lhs: va.shape(),
                rhs: vb.shape(),
            });
        }
        let mut data = Vec::with_capacity(va.len() + vb.len());
        data.extend_from_slice(va.as_slice());
        data.extend_from_slice(vb.as_slice());
        let v = Matrix::from_vec(va.rows() + vb.rows(), va.cols(), data)?;
        self.push_checked("concat_rows", v, Op::ConcatRows(a, b), &[a, b])
    }

    /// Divide each row by its Euclidean norm. Rows with norm below
    /// [`NORM_EPS`] are an error.
    pub fn row_l2_normalize(&mut self, a: TensorId) -> Result<TensorId> {
        let va = self.value(a);
        let mut v = va.clone();
        let mut norms = Vec::with_capacity(va.rows());
        for r in 0..va.rows() {
            let n = va.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(n >= NORM_EPS) {
                return Err(Error::InvalidArgument(format!(
                    "row_l2_normalize: row {r} has norm {n:e}"
                )));
            }
            for x in v.row_mut(r) {
                *x /= n;
            }
            norms.push(n);
        }
        self.push_checked("row_l2_normalize", v, Op::RowL2Normalize(a, norms), &[a])
    }

    /// Stabilized `log Σ exp` of each row: `m×n → m×1`.
    pub fn log_sum_exp_row(&mut self, a: TensorId) -> Result<TensorId> {
        let va = self.value(a);
        if va.cols() == 0 {
            return Err(Error::InvalidArgument("log_sum_exp_row of empty row".into()));
        }
        let mut out = Matrix::zeros(va.rows(), 1);
        for r in 0..va.rows() {
            out[(r, 0)] = log_sum_exp(va.row(r));
        }
        self.push_checked("log_sum_exp_row", out, Op::LogSumExpRow(a), &[a])
    }

    pub fn sparse_rows(&mut self, map: Arc<SparseRows>, a: TensorId) -> Result<TensorId> {
        let va = self.value(a);
        if map.input_rows() != va.rows() {
            return Err(Error::ShapeMismatch {
                op: "sparse_rows",
                lhs: (map.output_rows(), map.input_rows()),
                rhs: va.shape(),
            });
        }
        let v = map.apply(va);
        self.push_checked("sparse_rows", v, Op::SparseRows(a, map), &[a])
    }

    /// Collect the listed `(row, col)` entries into a `1×len` row vector.
    pub fn gather(&mut self, a: TensorId, entries: Vec<(usize, usize)>) -> Result<TensorId> {
        let va = self.value(a);
        let (rows, cols) = va.shape();
        let mut out = Vec::with_capacity(entries.len());
        for &(r, c) in &entries {
            if r >= rows || c >= cols {
                return Err(Error::InvalidArgument(format!(
                    "gather index ({r}, {c}) outside {rows}x{cols}"
                )));
            }
            out.push(va[(r, c)]);
        }
        let v = Matrix::row_vector(&out);
        self.push_checked("gather", v, Op::Gather(a, entries), &[a])
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate additively
    /// across fan-out and are afterwards readable through [`Tape::grad`].
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Autodiff(format!("unknown tensor {}", loss.0)))?;
        if node.value.shape() != (1, 1) {
            return Err(Error::Autodiff(format!(
                "backward needs a scalar loss, got {:?}",
                node.value.shape()
            )));
        }
        if !node.requires_grad {
            return Err(Error::Autodiff(
                "backward on a tensor detached from every parameter".into(),
            ));
        }

        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        // Keep only what a caller can meaningfully ask for.
        for (idx, g) in grads.iter_mut().enumerate() {
            if !matches!(self.nodes[idx].op, Op::Leaf) {
                *g = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let nodes = &self.nodes;
        let mut acc = |id: TensorId, f: &mut dyn FnMut(&mut Matrix)| {
            let n = &nodes[id.0];
            if !n.requires_grad {
                return;
            }
            let slot = grads[id.0].get_or_insert_with(|| {
                let (r, c) = n.value.shape();
                Matrix::zeros(r, c)
            });
            f(slot);
        };
        let val = |id: TensorId| &nodes[id.0].value;

        match &nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                // dA = G Bᵀ, dB = Aᵀ G
                let (a, b) = (*a, *b);
                acc(a, &mut |s| gemm_nt_acc(g, val(b), s));
                acc(b, &mut |s| gemm_tn_acc(val(a), g, s));
            }
            Op::MatMulNt(a, b) => {
                // C = A Bᵀ: dA = G B, dB = Gᵀ A
                let (a, b) = (*a, *b);
                acc(a, &mut |s| gemm_acc(g, val(b), s));
                acc(b, &mut |s| gemm_tn_acc(g, val(a), s));
            }
            Op::Transpose(a) => acc(*a, &mut |s| s.add_assign(&g.transpose())),
            Op::Add(a, b) => {
                acc(*a, &mut |s| s.add_assign(g));
                acc(*b, &mut |s| s.add_assign(g));
            }
            Op::AddRowBroadcast(a, b) => {
                acc(*a, &mut |s| s.add_assign(g));
                acc(*b, &mut |s| {
                    for r in 0..g.rows() {
                        for (o, x) in s.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                });
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| s.add_assign(g));
                acc(*b, &mut |s| {
                    for (o, x) in s.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *o -= x;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                acc(a, &mut |s| {
                    let it = g.as_slice().iter().zip(val(b).as_slice());
                    for (o, (gx, y)) in s.as_mut_slice().iter_mut().zip(it) {
                        *o += gx * y;
                    }
                });
                acc(b, &mut |s| {
                    let it = g.as_slice().iter().zip(val(a).as_slice());
                    for (o, (gx, y)) in s.as_mut_slice().iter_mut().zip(it) {
                        *o += gx * y;
                    }
                });
            }
            Op::Scale(a, c) => {
                let c = *c;
                acc(*a, &mut |s| {
                    for (o, x) in s.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *o += c * x;
                    }
                });
            }
            Op::Relu(a) => {
                let a = *a;
                acc(a, &mut |s| {
                    let it = g.as_slice().iter().zip(val(a).as_slice());
                    for (o, (gx, x)) in s.as_mut_slice().iter_mut().zip(it) {
                        if *x > 0.0 {
                            *o += gx;
                        }
                    }
                });
            }
            Op::Map(a, df) => {
                let a = *a;
                acc(a, &mut |s| {
                    let it = g.as_slice().iter().zip(val(a).as_slice());
                    for (o, (gx, x)) in s.as_mut_slice().iter_mut().zip(it) {
                        *o += gx * df(*x);
                    }
                });
            }
            Op::MeanRows(a) => {
                let a = *a;
                let inv = 1.0 / val(a).rows() as f64;
                acc(a, &mut |s| {
                    for r in 0..s.rows() {
                        for (o, x) in s.row_mut(r).iter_mut().zip(g.row(0)) {
                            *o += inv * x;
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let g0 = g[(0, 0)];
                acc(*a, &mut |s| {
                    for o in s.as_mut_slice() {
                        *o += g0;
                    }
                });
            }
            Op::ConcatRows(a, b) => {
                let (a, b) = (*a, *b);
                let split = val(a).len();
                acc(a, &mut |s| {
                    for (o, x) in s.as_mut_slice().iter_mut().zip(&g.as_slice()[..split]) {
                        *o += x;
                    }
                });
                acc(b, &mut |s| {
                    for (o, x) in s.as_mut_slice().iter_mut().zip(&g.as_slice()[split..]) {
                        *o += x;
                    }
                });
            }
            Op::RowL2Normalize(a, norms) => {
                // y = x/‖x‖ ⇒ dx = (g − y (y·g)) / ‖x‖
                let y = &nodes[idx].value;
                acc(*a, &mut |s| {
                    for (r, n) in norms.iter().enumerate() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for ((o, yv), gv) in s.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o += (gv - yv * dot) / n;
                        }
                    }
                });
            }
            Op::LogSumExpRow(a) => {
                // d lse / dx = softmax(x)
                let a = *a;
                let lse = &nodes[idx].value;
                acc(a, &mut |s| {
                    let x = val(a);
                    for r in 0..x.rows() {
                        let (gr, l) = (g[(r, 0)], lse[(r, 0)]);
                        for (o, xv) in s.row_mut(r).iter_mut().zip(x.row(r)) {
                            *o += gr * (xv - l).exp();
                        }
                    }
                });
            }
            Op::SparseRows(a, map) => acc(*a, &mut |s| map.apply_transpose_acc(g, s)),
            Op::Gather(a, entries) => {
                acc(*a, &mut |s| {
                    for (k, &(r, c)) in entries.iter().enumerate() {
                        s[(r, c)] += g[(0, k)];
                    }
                });
            }
        }
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
