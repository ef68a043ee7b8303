//! Reverse-mode automatic differentiation over dense row-major `f64`
//! matrices.
//!
//! A [`Tape`] records every op in execution order, so replaying it
//! backwards is a valid reverse topological order. Every forward result is
//! checked for NaN and infinity.
//!
//! ```
//! use nara::autodiff::{Mat, Tape};
//!
//! let mut t = Tape::new();
//! let x = t.param(Mat::row(vec![1.0, 2.0]));
//! let sq = t.mul(x, x).unwrap();
//! let s = t.sum(sq).unwrap();
//! t.backward(s).unwrap();
//! assert_eq!(t.grad(x).unwrap().data(), &[2.0, 4.0]);
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "mat",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Mat {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Mat::filled(1, 1, v)
    }

    pub fn row(data: Vec<f64>) -> Self {
        Mat {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Invalid("ragged rows".into()));
        }
        Ok(Mat {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The single value of a `1 x 1` matrix.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, o: &Mat) -> Mat {
        let mut out = Mat::zeros(self.rows, o.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * o.cols..(i + 1) * o.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &o.data[k * o.cols..(k + 1) * o.cols];
                for (x, b) in orow.iter_mut().zip(brow) {
                    *x += a * b;
                }
            }
        }
        out
    }

    fn add_assign(&mut self, o: &Mat) {
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += b;
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, o: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&o.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    SoftmaxRows(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    L2NormRows(Var, Vec<f64>),
    Scale(Var, f64),
    AddScalar(Var),
    AddBias(Var, Var),
    MulCol(Var, Var),
    MulConst(Var, Mat),
    LayerNorm(Var, Var, Var, Vec<f64>),
    Pick(Var, Vec<(usize, usize)>),
    MaskedLogSumExp(Var, Vec<bool>),
}

struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Mat>>,
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

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Mat) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push_raw(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Mat, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric { op: name });
        }
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(value, op, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push("add", v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push("sub", v, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push("mul", v, Op::Mul(a, b), &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.1 != sb.0 {
            return Err(Error::Shape {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let v = self.value(a).matmul(self.value(b));
        self.push("matmul", v, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose();
        self.push("transpose", v, Op::Transpose(a), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |&p| self.value(p).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            if m.cols() != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    left: self.value(parts[0]).shape(),
                    right: m.shape(),
                });
            }
            rows += m.rows();
            data.extend_from_slice(m.data());
        }
        let v = Mat::new(rows, cols, data)?;
        self.push("concat_rows", v, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: self.value(parts[0]).shape(),
                    right: self.value(p).shape(),
                });
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let v = Mat::new(rows, cols, data)?;
        self.push("concat_cols", v, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Rows `idx` of `a`, in order; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let m = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= m.rows()) {
            return Err(Error::Shape {
                op: "gather_rows",
                left: m.shape(),
                right: (bad, 0),
            });
        }
        let mut data = Vec::with_capacity(idx.len() * m.cols());
        for &i in idx {
            data.extend_from_slice(m.row_slice(i));
        }
        let v = Mat::new(idx.len(), m.cols(), data)?;
        self.push("gather_rows", v, Op::GatherRows(a, idx.to_vec()), &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let idx: Vec<usize> = (start..end).collect();
        self.gather_rows(a, &idx)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let m = self.value(a);
        if start > end || end > m.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                left: m.shape(),
                right: (start, end),
            });
        }
        let mut data = Vec::with_capacity(m.rows() * (end - start));
        for r in 0..m.rows() {
            data.extend_from_slice(&m.row_slice(r)[start..end]);
        }
        let v = Mat::new(m.rows(), end - start, data)?;
        self.push("slice_cols", v, Op::SliceCols(a, start), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let mut out = m.clone();
        for r in 0..m.rows() {
            let row = &mut out.data[r * m.cols()..(r + 1) * m.cols()];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                s += *x;
            }
            row.iter_mut().for_each(|x| *x /= s);
        }
        self.push("softmax_rows", out, Op::SoftmaxRows(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(sigmoid);
        self.push("sigmoid", v, Op::Sigmoid(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push("relu", v, Op::Relu(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        self.push("exp", v, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::ln);
        self.push("log", v, Op::Log(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Mat::scalar(self.value(a).data().iter().sum());
        self.push("sum", v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.data().is_empty() {
            return Err(Error::Shape {
                op: "mean",
                left: m.shape(),
                right: (1, 1),
            });
        }
        let v = Mat::scalar(m.data().iter().sum::<f64>() / m.data().len() as f64);
        self.push("mean", v, Op::Mean(a), &[a])
    }

    /// Per-row sums as an `n x 1` column.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let data = (0..m.rows()).map(|r| m.row_slice(r).iter().sum()).collect();
        let v = Mat::new(m.rows(), 1, data)?;
        self.push("sum_rows", v, Op::SumRows(a), &[a])
    }

    /// Scale each row to unit L2 norm. Zero rows are an error.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        let mut out = m.clone();
        let mut norms = Vec::with_capacity(m.rows());
        for r in 0..m.rows() {
            let n = m.row_slice(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            if n < 1e-12 {
                return Err(Error::Numeric { op: "l2_normalize_rows" });
            }
            out.data[r * m.cols()..(r + 1) * m.cols()]
                .iter_mut()
                .for_each(|x| *x /= n);
            norms.push(n);
        }
        self.push("l2_normalize_rows", out, Op::L2NormRows(a, norms), &[a])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * s);
        self.push("scale", v, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + s);
        self.push("add_scalar", v, Op::AddScalar(a), &[a])
    }

    /// `a` (`n x c`) plus the row vector `b` (`1 x c`) on every row.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sb != (1, sa.1) {
            return Err(Error::Shape {
                op: "add_bias",
                left: sa,
                right: sb,
            });
        }
        let mut v = self.value(a).clone();
        let bias = self.value(b).data().to_vec();
        for r in 0..sa.0 {
            for (x, y) in v.data[r * sa.1..(r + 1) * sa.1].iter_mut().zip(&bias) {
                *x += y;
            }
        }
        self.push("add_bias", v, Op::AddBias(a, b), &[a, b])
    }

    /// Scale row `r` of `a` by `col[r]` (`col` is `n x 1`).
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (sa, sc) = (self.value(a).shape(), self.value(col).shape());
        if sc != (sa.0, 1) {
            return Err(Error::Shape {
                op: "mul_col",
                left: sa,
                right: sc,
            });
        }
        let mut v = self.value(a).clone();
        for r in 0..sa.0 {
            let s = self.value(col).data()[r];
            v.data[r * sa.1..(r + 1) * sa.1].iter_mut().for_each(|x| *x *= s);
        }
        self.push("mul_col", v, Op::MulCol(a, col), &[a, col])
    }

    /// Elementwise product with a constant, e.g. a dropout mask.
    pub fn mul_const(&mut self, a: Var, c: Mat) -> Result<Var> {
        if self.value(a).shape() != c.shape() {
            return Err(Error::Shape {
                op: "mul_const",
                left: self.value(a).shape(),
                right: c.shape(),
            });
        }
        let v = self.value(a).zip(&c, |x, y| x * y);
        self.push("mul_const", v, Op::MulConst(a, c), &[a])
    }

    /// Row-wise layer normalization with gain and bias (`1 x c` each).
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var) -> Result<Var> {
        let (n, c) = self.value(a).shape();
        for p in [gain, bias] {
            if self.value(p).shape() != (1, c) {
                return Err(Error::Shape {
                    op: "layer_norm",
                    left: (n, c),
                    right: self.value(p).shape(),
                });
            }
        }
        let m = self.value(a);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut out = Mat::zeros(n, c);
        let mut inv_std = Vec::with_capacity(n);
        for r in 0..n {
            let row = m.row_slice(r);
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for k in 0..c {
                out.data[r * c + k] = (row[k] - mu) * is * g[k] + b[k];
            }
            inv_std.push(is);
        }
        self.push("layer_norm", out, Op::LayerNorm(a, gain, bias, inv_std), &[a, gain, bias])
    }

    /// Entries `(row, col)` of `a` as a `k x 1` column.
    pub fn pick(&mut self, a: Var, at: &[(usize, usize)]) -> Result<Var> {
        let m = self.value(a);
        if let Some(&bad) = at.iter().find(|&&(r, c)| r >= m.rows() || c >= m.cols()) {
            return Err(Error::Shape {
                op: "pick",
                left: m.shape(),
                right: bad,
            });
        }
        let data = at.iter().map(|&(r, c)| m.get(r, c)).collect();
        let v = Mat::new(at.len(), 1, data)?;
        self.push("pick", v, Op::Pick(a, at.to_vec()), &[a])
    }

    /// `log sum exp` over the entries of each row where `mask` is set.
    /// Every row needs at least one selected entry.
    pub fn masked_logsumexp_rows(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let m = self.value(a);
        let (n, c) = m.shape();
        if mask.len() != n * c {
            return Err(Error::Shape {
                op: "masked_logsumexp_rows",
                left: m.shape(),
                right: (mask.len(), 1),
            });
        }
        let mut data = Vec::with_capacity(n);
        for r in 0..n {
            let sel = || (0..c).filter(|&k| mask[r * c + k]).map(|k| m.get(r, k));
            let mx = sel().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = sel().map(|x| (x - mx).exp()).sum();
            data.push(mx + s.ln());
        }
        let v = Mat::new(n, 1, data)?;
        self.push("masked_logsumexp_rows", v, Op::MaskedLogSumExp(a, mask.to_vec()), &[a])
    }

    /// Accumulate gradients of `out` (seeded with ones) into every node
    /// that depends on a parameter.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        let n = self.nodes.len();
        self.grads = vec![None; n];
        let (r, c) = self.value(out).shape();
        self.grads[out.0] = Some(Mat::filled(r, c, 1.0));
        for idx in (0..=out.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else { continue };
            if !g.is_finite() {
                return Err(Error::Numeric { op: "backward" });
            }
            self.backprop(idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, g: Mat) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(e) => e.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn backprop(&mut self, idx: usize, g: &Mat) {
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(a, g.clone());
                self.acc(b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(a, g.clone());
                self.acc(b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let ga = g.zip(self.value(b), |x, y| x * y);
                let gb = g.zip(self.value(a), |x, y| x * y);
                self.acc(a, ga);
                self.acc(b, gb);
            }
            Op::MatMul(a, b) => {
                let ga = g.matmul(&self.value(b).transpose());
                let gb = self.value(a).transpose().matmul(g);
                self.acc(a, ga);
                self.acc(b, gb);
            }
            Op::Transpose(a) => self.acc(a, g.transpose()),
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let (r, c) = self.value(p).shape();
                    let d = g.data[off * c..(off + r) * c].to_vec();
                    self.acc(p, Mat { rows: r, cols: c, data: d });
                    off += r;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let (r, c) = self.value(p).shape();
                    let mut d = Vec::with_capacity(r * c);
                    for row in 0..r {
                        d.extend_from_slice(&g.row_slice(row)[off..off + c]);
                    }
                    self.acc(p, Mat { rows: r, cols: c, data: d });
                    off += c;
                }
            }
            Op::GatherRows(a, idx) => {
                let (r, c) = self.value(a).shape();
                let mut ga = Mat::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    for (x, y) in ga.data[i * c..(i + 1) * c].iter_mut().zip(g.row_slice(k)) {
                        *x += y;
                    }
                }
                self.acc(a, ga);
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.value(a).shape();
                let mut ga = Mat::zeros(r, c);
                for row in 0..r {
                    ga.data[row * c + start..row * c + start + g.cols].copy_from_slice(g.row_slice(row));
                }
                self.acc(a, ga);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[idx].value;
                let mut ga = Mat::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let yr = y.row_slice(r);
                    let gr = g.row_slice(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for k in 0..y.cols {
                        ga.data[r * y.cols + k] = yr[k] * (gr[k] - dot);
                    }
                }
                self.acc(a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = g.zip(&self.nodes[idx].value, |gg, y| gg * y * (1.0 - y));
                self.acc(a, ga);
            }
            Op::Relu(a) => {
                let ga = g.zip(self.value(a), |gg, x| if x > 0.0 { gg } else { 0.0 });
                self.acc(a, ga);
            }
            Op::Exp(a) => {
                let ga = g.zip(&self.nodes[idx].value, |gg, y| gg * y);
                self.acc(a, ga);
            }
            Op::Log(a) => {
                let ga = g.zip(self.value(a), |gg, x| gg / x);
                self.acc(a, ga);
            }
            Op::Sum(a) => {
                let (r, c) = self.value(a).shape();
                self.acc(a, Mat::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let (r, c) = self.value(a).shape();
                self.acc(a, Mat::filled(r, c, g.item() / (r * c) as f64));
            }
            Op::SumRows(a) => {
                let (r, c) = self.value(a).shape();
                let mut ga = Mat::zeros(r, c);
                for row in 0..r {
                    ga.data[row * c..(row + 1) * c].iter_mut().for_each(|x| *x = g.data[row]);
                }
                self.acc(a, ga);
            }
            Op::L2NormRows(a, norms) => {
                let y = &self.nodes[idx].value;
                let mut ga = Mat::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let yr = y.row_slice(r);
                    let gr = g.row_slice(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for k in 0..y.cols {
                        ga.data[r * y.cols + k] = (gr[k] - yr[k] * dot) / norms[r];
                    }
                }
                self.acc(a, ga);
            }
            Op::Scale(a, s) => self.acc(a, g.map(|x| x * s)),
            Op::AddScalar(a) => self.acc(a, g.clone()),
            Op::AddBias(a, b) => {
                let c = g.cols;
                let mut gb = Mat::zeros(1, c);
                for r in 0..g.rows {
                    for (x, y) in gb.data.iter_mut().zip(g.row_slice(r)) {
                        *x += y;
                    }
                }
                self.acc(a, g.clone());
                self.acc(b, gb);
            }
            Op::MulCol(a, col) => {
                let (r, c) = g.shape();
                let s = self.value(col).data().to_vec();
                let av = self.value(a);
                let mut ga = g.clone();
                let mut gc = Mat::zeros(r, 1);
                for row in 0..r {
                    let mut dot = 0.0;
                    for k in 0..c {
                        ga.data[row * c + k] *= s[row];
                        dot += g.data[row * c + k] * av.data[row * c + k];
                    }
                    gc.data[row] = dot;
                }
                self.acc(a, ga);
                self.acc(col, gc);
            }
            Op::MulConst(a, m) => self.acc(a, g.zip(&m, |x, y| x * y)),
            Op::LayerNorm(a, gain, bias, inv_std) => {
                let (n, c) = g.shape();
                let x = self.value(a);
                let gv = self.value(gain).data().to_vec();
                let mut ga = Mat::zeros(n, c);
                let mut gg = Mat::zeros(1, c);
                let mut gbias = Mat::zeros(1, c);
                for r in 0..n {
                    let row = x.row_slice(r);
                    let mu = row.iter().sum::<f64>() / c as f64;
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mu) * inv_std[r]).collect();
                    let dxhat: Vec<f64> = (0..c).map(|k| g.get(r, k) * gv[k]).collect();
                    let m1 = dxhat.iter().sum::<f64>() / c as f64;
                    let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for k in 0..c {
                        ga.data[r * c + k] = inv_std[r] * (dxhat[k] - m1 - xhat[k] * m2);
                        gg.data[k] += g.get(r, k) * xhat[k];
                        gbias.data[k] += g.get(r, k);
                    }
                }
                self.acc(a, ga);
                self.acc(gain, gg);
                self.acc(bias, gbias);
            }
            Op::Pick(a, at) => {
                let (r, c) = self.value(a).shape();
                let mut ga = Mat::zeros(r, c);
                for (k, &(i, j)) in at.iter().enumerate() {
                    ga.data[i * c + j] += g.data[k];
                }
                self.acc(a, ga);
            }
            Op::MaskedLogSumExp(a, mask) => {
                let x = self.value(a);
                let y = &self.nodes[idx].value;
                let (r, c) = x.shape();
                let mut ga = Mat::zeros(r, c);
                for row in 0..r {
                    for k in 0..c {
                        if mask[row * c + k] {
                            ga.data[row * c + k] = g.data[row] * (x.get(row, k) - y.data[row]).exp();
                        }
                    }
                }
                self.acc(a, ga);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Compare tape gradients of a scalar function against central finite
/// differences. Returns the maximum of `|a - f| / max(1e-8, |a| + |f|)`
/// over every coordinate of every input.
pub fn grad_check<F>(f: F, inputs: &[Mat], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Mat]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut t = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|m| t.param(m.clone())).collect();
        let out = f(&mut t, &vars)?;
        if t.value(out).shape() != (1, 1) {
            return Err(Error::Shape {
                op: "grad_check",
                left: t.value(out).shape(),
                right: (1, 1),
            });
        }
        Ok((t, vars, out))
    };
    let (mut t, vars, out) = eval(inputs)?;
    t.backward(out)?;
    let analytic: Vec<Mat> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, m)| t.grad(v).cloned().unwrap_or_else(|| Mat::zeros(m.rows(), m.cols())))
        .collect();
    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for i in 0..inputs.len() {
        for k in 0..inputs[i].data.len() {
            let x0 = inputs[i].data[k];
            probe[i].data[k] = x0 + eps;
            let fp = { let (t, _, o) = eval(&probe)?; t.value(o).item() };
            probe[i].data[k] = x0 - eps;
            let fm = { let (t, _, o) = eval(&probe)?; t.value(o).item() };
            probe[i].data[k] = x0;
            let fd = (fp - fm) / (2.0 * eps);
            let a = analytic[i].data[k];
            worst = worst.max((a - fd).abs() / (a.abs() + fd.abs()).max(1e-8));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn closed_forms() {
        let mut t = Tape::new();
        let z = t.param(Mat::row(vec![0.0, 0.0, 0.0]));
        let s = t.softmax_rows(z).unwrap();
        for &v in t.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = t.param(Mat::scalar(0.0));
        let y = t.sigmoid(x).unwrap();
        assert_eq!(t.value(y).item(), 0.5);
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().item(), 0.25);
    }

    #[test]
    fn errors() {
        let mut t = Tape::new();
        let a = t.param(Mat::zeros(2, 3));
        let b = t.param(Mat::zeros(2, 2));
        match t.add(a, b) {
            Err(Error::Shape { left, right, .. }) => assert_eq!((left, right), ((2, 3), (2, 2))),
            other => panic!("{other:?}"),
        }
        let z = t.param(Mat::scalar(0.0));
        assert!(matches!(t.log(z), Err(Error::Numeric { .. })));
        let big = t.param(Mat::scalar(1000.0));
        assert!(matches!(t.exp(big), Err(Error::Numeric { .. })));
        assert!(grad_check(|_t, v| Ok(v[0]), &[Mat::zeros(2, 2)], 1e-5).is_err());
    }

    #[test]
    fn sum_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = grad_check(|t, v| t.sum(v[0]), &[rand_mat(&mut rng, 3, 4)], 1e-5).unwrap();
        assert!(e < 1e-9, "{e}");
        let e = grad_check(
            |t, v| {
                let s = t.sigmoid(v[0])?;
                t.sum(s)
            },
            &[rand_mat(&mut rng, 4, 5)],
            1e-5,
        )
        .unwrap();
        assert!(e < 1e-6, "{e}");
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let mut t = Tape::new();
        let x = t.param(Mat::row(vec![3.0]));
        let a = t.add(x, x).unwrap();
        let b = t.mul(a, x).unwrap();
        t.backward(b).unwrap();
        // d/dx 2x^2 = 4x
        assert_eq!(t.grad(x).unwrap().item(), 12.0);
    }
}
