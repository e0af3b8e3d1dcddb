//! Define-by-run reverse-mode differentiation over [`Tensor`]s.
//!
//! Every op appends a node holding its output value. `backward` walks the
//! nodes in reverse recording order, so each node is visited once and fan-out
//! gradients are summed before they are propagated further.

use std::ops::Range;

use super::param::{ParamId, ParamStore};
use super::tensor::{self, Tensor, TensorError};

/// Lower clamp applied to probabilities inside the cross-entropy op.
pub const LOG_CLAMP: f64 = 1e-12;
/// Clamp applied to mean activations inside the sparsity op.
pub const KL_CLAMP: f64 = 1e-6;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    SoftmaxSegments(Var, Vec<Range<usize>>),
    SegmentSum(Var, Vec<Range<usize>>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, Range<usize>),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    SumSquares(Var),
    Grl(Var, f64),
    Nll(Var, Vec<usize>),
    KlSparsity(Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

fn invalid(op: &'static str, message: impl Into<String>) -> TensorError {
    TensorError::Invalid {
        op,
        message: message.into(),
    }
}

fn check_segments(op: &'static str, segments: &[Range<usize>], n: usize) -> Result<(), TensorError> {
    let mut next = 0;
    for s in segments {
        if s.start != next || s.end <= s.start {
            return Err(invalid(
                op,
                format!("segments must be contiguous and nonempty, got {s:?}"),
            ));
        }
        next = s.end;
    }
    if next != n {
        return Err(invalid(op, format!("segments cover {next} of {n} rows")));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<Var, TensorError> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = match &op {
            Op::Constant => false,
            Op::Param(_) => true,
            other => inputs(other).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records the current value of a parameter; `backward` accumulates into its gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(mismatch("matmul", x, y));
        }
        let out = tensor::matmul(x, y);
        self.push(Op::MatMul(a, b), out, "matmul")
    }

    /// `a * b^T`, the shape used by affine layers with `out x in` weights.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.cols() {
            return Err(mismatch("matmul_nt", x, y));
        }
        let out = tensor::matmul_nt(x, y);
        self.push(Op::MatMulNT(a, b), out, "matmul_nt")
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch(name, x, y));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::from_vec(x.rows(), x.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip_with(a, b, "add", |p, q| p + q)?;
        self.push(Op::Add(a, b), out, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip_with(a, b, "sub", |p, q| p - q)?;
        self.push(Op::Sub(a, b), out, "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip_with(a, b, "mul", |p, q| p * q)?;
        self.push(Op::Mul(a, b), out, "mul")
    }

    /// Adds a `1 x n` row (a bias) to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(mismatch("add_row", x, r));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        self.push(Op::AddRow(a, row), out, "add_row")
    }

    /// Scales row `i` of an `m x n` matrix by entry `i` of an `m x 1` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, TensorError> {
        let (x, c) = (self.value(a), self.value(col));
        if c.cols() != 1 || c.rows() != x.rows() {
            return Err(mismatch("mul_col", x, c));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            let s = c.data()[i];
            out.row_mut(i).iter_mut().for_each(|o| *o *= s);
        }
        self.push(Op::MulCol(a, col), out, "mul_col")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, TensorError> {
        let out = self.value(a).map(|v| v * s);
        self.push(Op::Scale(a, s), out, "scale")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(tensor::sigmoid);
        self.push(Op::Sigmoid(a), out, "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), out, "tanh")
    }

    /// Row-wise max-shifted softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let x = self.value(a);
        if x.cols() == 0 {
            return Err(invalid("softmax_rows", "zero columns"));
        }
        let mut out = Tensor::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            tensor::softmax_into(x.row(i), out.row_mut(i));
        }
        self.push(Op::SoftmaxRows(a), out, "softmax_rows")
    }

    /// Softmax of an `n x 1` column taken independently within each row range.
    /// Rows outside a segment never share normalization, which is what a
    /// padding mask would achieve for ragged inputs.
    pub fn softmax_segments(&mut self, a: Var, segments: Vec<Range<usize>>) -> Result<Var, TensorError> {
        let x = self.value(a);
        if x.cols() != 1 {
            return Err(invalid(
                "softmax_segments",
                format!("expected a column, got {:?}", x.shape()),
            ));
        }
        check_segments("softmax_segments", &segments, x.rows())?;
        let mut out = vec![0.0; x.rows()];
        for s in &segments {
            tensor::softmax_into(&x.data()[s.clone()], &mut out[s.clone()]);
        }
        let out = Tensor::column_vector(out);
        self.push(Op::SoftmaxSegments(a, segments), out, "softmax_segments")
    }

    /// Sums the rows inside each segment: `n x d` to `segments.len() x d`.
    pub fn segment_sum(&mut self, a: Var, segments: Vec<Range<usize>>) -> Result<Var, TensorError> {
        let x = self.value(a);
        check_segments("segment_sum", &segments, x.rows())?;
        let mut out = Tensor::zeros(segments.len(), x.cols());
        for (k, s) in segments.iter().enumerate() {
            for i in s.clone() {
                for (o, v) in out.row_mut(k).iter_mut().zip(x.row(i)) {
                    *o += v;
                }
            }
        }
        self.push(Op::SegmentSum(a, segments), out, "segment_sum")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = self.value(*parts.first().ok_or_else(|| invalid("concat_cols", "no inputs"))?);
        let rows = first.rows();
        for p in parts {
            if self.value(*p).rows() != rows {
                return Err(mismatch("concat_cols", first, self.value(*p)));
            }
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for i in 0..rows {
            let mut offset = 0;
            for p in parts {
                let src = self.value(*p).row(i);
                out.row_mut(i)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()), out, "concat_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = self.value(*parts.first().ok_or_else(|| invalid("concat_rows", "no inputs"))?);
        let cols = first.cols();
        let mut data = Vec::new();
        for p in parts {
            let t = self.value(*p);
            if t.cols() != cols {
                return Err(mismatch("concat_rows", first, t));
            }
            data.extend_from_slice(t.data());
        }
        let rows = data.len() / cols.max(1);
        let out = Tensor::from_vec(rows, cols, data)?;
        self.push(Op::ConcatRows(parts.to_vec()), out, "concat_rows")
    }

    pub fn slice_cols(&mut self, a: Var, cols: Range<usize>) -> Result<Var, TensorError> {
        let x = self.value(a);
        if cols.end > x.cols() || cols.start >= cols.end {
            return Err(invalid("slice_cols", format!("range {cols:?} of {} columns", x.cols())));
        }
        let mut out = Tensor::zeros(x.rows(), cols.len());
        for i in 0..x.rows() {
            out.row_mut(i).copy_from_slice(&x.row(i)[cols.clone()]);
        }
        self.push(Op::SliceCols(a, cols), out, "slice_cols")
    }

    /// Row lookup; the backward pass scatter-adds into the selected rows only.
    pub fn gather_rows(&mut self, a: Var, indices: Vec<usize>) -> Result<Var, TensorError> {
        let x = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.rows()) {
            return Err(invalid("gather_rows", format!("row {bad} out of {} rows", x.rows())));
        }
        let mut out = Tensor::zeros(indices.len(), x.cols());
        for (k, &i) in indices.iter().enumerate() {
            out.row_mut(k).copy_from_slice(x.row(i));
        }
        self.push(Op::GatherRows(a, indices), out, "gather_rows")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(Op::Sum(a), out, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(invalid("mean", "empty input"));
        }
        let out = Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64);
        self.push(Op::Mean(a), out, "mean")
    }

    pub fn sum_squares(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = Tensor::scalar(self.value(a).sum_squares());
        self.push(Op::SumSquares(a), out, "sum_squares")
    }

    /// Gradient reversal: identity forward, gradient scaled by `-lambda` backward.
    pub fn grl(&mut self, a: Var, lambda: f64) -> Result<Var, TensorError> {
        if lambda.is_nan() || lambda < 0.0 {
            return Err(invalid("grl", format!("lambda must be >= 0, got {lambda}")));
        }
        let out = self.value(a).clone();
        self.push(Op::Grl(a, lambda), out, "grl")
    }

    /// Mean negative log of `probs[k, labels[k]]`, clamped at [`LOG_CLAMP`].
    pub fn nll(&mut self, probs: Var, labels: Vec<usize>) -> Result<Var, TensorError> {
        let p = self.value(probs);
        if labels.len() != p.rows() || labels.is_empty() {
            return Err(invalid("nll", format!("{} labels for {} rows", labels.len(), p.rows())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= p.cols()) {
            return Err(invalid("nll", format!("label {bad} out of {} classes", p.cols())));
        }
        let n = labels.len() as f64;
        let loss = -labels
            .iter()
            .enumerate()
            .map(|(k, &l)| p.get(k, l).max(LOG_CLAMP).ln())
            .sum::<f64>()
            / n;
        self.push(Op::Nll(probs, labels), Tensor::scalar(loss), "nll")
    }

    /// KL sparsity penalty `sum_j KL(rho || mean_k a[k, j])` over the columns
    /// of an activation matrix, mean activations clamped to `[1e-6, 1 - 1e-6]`.
    pub fn kl_sparsity(&mut self, activations: Var, rho: f64) -> Result<Var, TensorError> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(invalid("kl_sparsity", format!("rho must lie in (0, 1), got {rho}")));
        }
        let a = self.value(activations);
        if a.rows() == 0 {
            return Err(invalid("kl_sparsity", "empty batch"));
        }
        let total: f64 = column_means(a)
            .into_iter()
            .map(|m| {
                let m = m.clamp(KL_CLAMP, 1.0 - KL_CLAMP);
                rho * (rho / m).ln() + (1.0 - rho) * ((1.0 - rho) / (1.0 - m)).ln()
            })
            .sum();
        self.push(Op::KlSparsity(activations, rho), Tensor::scalar(total), "kl_sparsity")
    }

    /// Back-propagates from a scalar `loss` and adds the result into the
    /// gradient accumulator of every parameter reachable from it.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<(), TensorError> {
        let shape = self.value(loss).shape();
        if shape != [1, 1] {
            return Err(TensorError::NotScalar(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => store.get_mut(*id).grad.add_assign(&g),
                op => self.propagate(op, &node.value, &g, &mut grads),
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match op {
            Op::Constant | Op::Param(_) => unreachable!(),
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    self.accumulate(grads, *a, tensor::matmul_nt(g, y));
                }
                if self.nodes[b.0].requires_grad {
                    self.accumulate(grads, *b, tensor::matmul_tn(x, g));
                }
            }
            Op::MatMulNT(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    self.accumulate(grads, *a, tensor::matmul(g, y));
                }
                if self.nodes[b.0].requires_grad {
                    self.accumulate(grads, *b, tensor::matmul_tn(g, x));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, elementwise(g, y, |p, q| p * q));
                self.accumulate(grads, *b, elementwise(g, x, |p, q| p * q));
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                let mut db = Tensor::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (d, v) in db.data_mut().iter_mut().zip(g.row(i)) {
                        *d += v;
                    }
                }
                self.accumulate(grads, *row, db);
            }
            Op::MulCol(a, col) => {
                let (x, c) = (self.value(*a), self.value(*col));
                let mut da = g.clone();
                let mut dc = Tensor::zeros(c.rows(), 1);
                for i in 0..g.rows() {
                    let s = c.data()[i];
                    da.row_mut(i).iter_mut().for_each(|v| *v *= s);
                    dc.data_mut()[i] = g.row(i).iter().zip(x.row(i)).map(|(p, q)| p * q).sum();
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *col, dc);
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|v| v * s)),
            Op::Sigmoid(a) => self.accumulate(grads, *a, elementwise(g, out, |d, y| d * y * (1.0 - y))),
            Op::Tanh(a) => self.accumulate(grads, *a, elementwise(g, out, |d, y| d * (1.0 - y * y))),
            Op::SoftmaxRows(a) => {
                let mut dx = Tensor::zeros(out.rows(), out.cols());
                for i in 0..out.rows() {
                    softmax_backward(out.row(i), g.row(i), dx.row_mut(i));
                }
                self.accumulate(grads, *a, dx);
            }
            Op::SoftmaxSegments(a, segments) => {
                let mut dx = vec![0.0; out.rows()];
                for s in segments {
                    softmax_backward(&out.data()[s.clone()], &g.data()[s.clone()], &mut dx[s.clone()]);
                }
                self.accumulate(grads, *a, Tensor::column_vector(dx));
            }
            Op::SegmentSum(a, segments) => {
                let x = self.value(*a);
                let mut dx = Tensor::zeros(x.rows(), x.cols());
                for (k, s) in segments.iter().enumerate() {
                    for i in s.clone() {
                        dx.row_mut(i).copy_from_slice(g.row(k));
                    }
                }
                self.accumulate(grads, *a, dx);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let cols = self.value(*p).cols();
                    let mut dp = Tensor::zeros(g.rows(), cols);
                    for i in 0..g.rows() {
                        dp.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + cols]);
                    }
                    offset += cols;
                    self.accumulate(grads, *p, dp);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let rows = self.value(*p).rows();
                    let cols = g.cols();
                    let data = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                    offset += rows;
                    self.accumulate(grads, *p, Tensor::from_vec(rows, cols, data).expect("slice shape"));
                }
            }
            Op::SliceCols(a, range) => {
                let x = self.value(*a);
                let mut dx = Tensor::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    dx.row_mut(i)[range.clone()].copy_from_slice(g.row(i));
                }
                self.accumulate(grads, *a, dx);
            }
            Op::GatherRows(a, indices) => {
                let x = self.value(*a);
                let mut dx = Tensor::zeros(x.rows(), x.cols());
                for (k, &i) in indices.iter().enumerate() {
                    for (d, v) in dx.row_mut(i).iter_mut().zip(g.row(k)) {
                        *d += v;
                    }
                }
                self.accumulate(grads, *a, dx);
            }
            Op::Sum(a) => {
                let [r, c] = self.value(*a).shape();
                self.accumulate(grads, *a, Tensor::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let [r, c] = self.value(*a).shape();
                self.accumulate(grads, *a, Tensor::filled(r, c, g.item() / (r * c) as f64));
            }
            Op::SumSquares(a) => {
                let s = 2.0 * g.item();
                self.accumulate(grads, *a, self.value(*a).map(|v| s * v));
            }
            Op::Grl(a, lambda) => {
                let s = -lambda;
                self.accumulate(grads, *a, g.map(|v| s * v));
            }
            Op::Nll(probs, labels) => {
                let p = self.value(*probs);
                let n = labels.len() as f64;
                let mut dp = Tensor::zeros(p.rows(), p.cols());
                for (k, &l) in labels.iter().enumerate() {
                    let pk = p.get(k, l);
                    if pk > LOG_CLAMP {
                        dp.set(k, l, -g.item() / (n * pk));
                    }
                }
                self.accumulate(grads, *probs, dp);
            }
            Op::KlSparsity(a, rho) => {
                let x = self.value(*a);
                let n = x.rows() as f64;
                let dm: Vec<f64> = column_means(x)
                    .into_iter()
                    .map(|m| {
                        if m <= KL_CLAMP || m >= 1.0 - KL_CLAMP {
                            0.0
                        } else {
                            g.item() * (-rho / m + (1.0 - rho) / (1.0 - m)) / n
                        }
                    })
                    .collect();
                let mut dx = Tensor::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    dx.row_mut(i).copy_from_slice(&dm);
                }
                self.accumulate(grads, *a, dx);
            }
        }
    }
}

fn inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Constant | Op::Param(_) => vec![],
        Op::MatMul(a, b)
        | Op::MatMulNT(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::AddRow(a, b)
        | Op::MulCol(a, b) => vec![*a, *b],
        Op::Scale(a, _)
        | Op::Sigmoid(a)
        | Op::Tanh(a)
        | Op::SoftmaxRows(a)
        | Op::SoftmaxSegments(a, _)
        | Op::SegmentSum(a, _)
        | Op::SliceCols(a, _)
        | Op::GatherRows(a, _)
        | Op::Sum(a)
        | Op::Mean(a)
        | Op::SumSquares(a)
        | Op::Grl(a, _)
        | Op::Nll(a, _)
        | Op::KlSparsity(a, _) => vec![*a],
        Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.clone(),
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

fn softmax_backward(y: &[f64], dy: &[f64], dx: &mut [f64]) {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    for ((d, &yi), &gi) in dx.iter_mut().zip(y).zip(dy) {
        *d = yi * (gi - dot);
    }
}

pub(crate) fn column_means(a: &Tensor) -> Vec<f64> {
    let mut means = vec![0.0; a.cols()];
    for i in 0..a.rows() {
        for (m, v) in means.iter_mut().zip(a.row(i)) {
            *m += v;
        }
    }
    let n = a.rows() as f64;
    means.iter_mut().for_each(|m| *m /= n);
    means
}
