//! Dense row-major matrices over `f64`.
//!
//! Only what the projection heads, pooling, normalization and the contrastive
//! loss need. Products and dot products accumulate in ascending index order;
//! row pooling sums each column in ascending value order. Either way the
//! result does not depend on how callers schedule the work.

use crate::error::{Error, Result};

/// Rows with a Euclidean norm below this are treated as degenerate by
/// [`Matrix::l2_normalize_rows`].
pub const NORM_EPSILON: f64 = 1e-12;

/// Number of output rows the matmul kernels accumulate at once. Each loaded
/// row of the right operand is reused this many times.
const ROW_BLOCK: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Output of [`Matrix::l2_normalize_rows`].
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedRows {
    pub matrix: Matrix,
    /// Norm of each input row before scaling.
    pub norms: Vec<f64>,
    /// `true` where the row norm fell below [`NORM_EPSILON`]; those rows are
    /// returned as all zeros.
    pub degenerate: Vec<bool>,
}

impl NormalizedRows {
    pub fn any_degenerate(&self) -> bool {
        self.degenerate.iter().any(|&d| d)
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "matrix entry ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::Shape {
                    op: "from_rows",
                    left: (i, cols),
                    right: (i, row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn row_vector(values: &[f64]) -> Result<Self> {
        Self::from_vec(1, values.len(), values.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::with_capacity(parts.iter().map(|m| m.data.len()).sum());
        let mut rows = 0;
        for m in parts {
            if m.cols != cols {
                return Err(Error::Shape {
                    op: "vstack",
                    left: (rows, cols),
                    right: m.shape(),
                });
            }
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        Ok(Matrix { rows, cols, data })
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        let a = &self.data;
        let inner = self.cols;
        accumulate_products(&mut out, other, inner, |i, k| a[i * inner + k]);
        Ok(out)
    }

    /// `selfᵀ · other`, without materializing the transpose.
    pub fn matmul_tn(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Shape {
                op: "matmul_tn",
                left: (self.cols, self.rows),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        let a = &self.data;
        let stride = self.cols;
        accumulate_products(&mut out, other, self.rows, |i, k| a[k * stride + i]);
        Ok(out)
    }

    /// `self · otherᵀ`: all pairwise row dot products.
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Shape {
                op: "matmul_nt",
                left: self.shape(),
                right: (other.cols, other.rows),
            });
        }
        // each entry accumulates k = 0, 1, ... like `dot`, so results agree bitwise
        self.matmul(&other.transpose())
    }

    /// Adds `bias` to every row.
    pub fn add_row_broadcast(&mut self, bias: &[f64]) -> Result<()> {
        if bias.len() != self.cols {
            return Err(Error::Shape {
                op: "add_row_broadcast",
                left: self.shape(),
                right: (1, bias.len()),
            });
        }
        for row in self.data.chunks_exact_mut(self.cols.max(1)) {
            for (x, b) in row.iter_mut().zip(bias) {
                *x += b;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    /// Normalizes each row to unit Euclidean norm. Rows whose norm is below
    /// [`NORM_EPSILON`] come back as zeros and are flagged.
    pub fn l2_normalize_rows(&self) -> NormalizedRows {
        let mut matrix = self.clone();
        let mut norms = Vec::with_capacity(self.rows);
        let mut degenerate = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            let row = matrix.row_mut(i);
            let norm = l2_norm(row);
            norms.push(norm);
            if norm < NORM_EPSILON {
                row.fill(0.0);
                degenerate.push(true);
            } else {
                for v in row.iter_mut() {
                    *v /= norm;
                }
                degenerate.push(false);
            }
        }
        NormalizedRows {
            matrix,
            norms,
            degenerate,
        }
    }

    /// Arithmetic mean of the rows.
    ///
    /// Each column is summed in ascending value order, so the result is
    /// bit-identical under any permutation of the rows.
    pub fn mean_pool_rows(&self) -> Result<Vec<f64>> {
        if self.rows == 0 {
            return Err(Error::EmptyInput("mean_pool_rows needs at least one row"));
        }
        let m = self.rows as f64;
        if self.rows <= 2 {
            // a + b is commutative in IEEE arithmetic
            let mut acc = self.row(0).to_vec();
            if self.rows == 2 {
                for (a, v) in acc.iter_mut().zip(self.row(1)) {
                    *a += v;
                }
            }
            acc.iter_mut().for_each(|a| *a /= m);
            return Ok(acc);
        }
        let mut column = vec![0.0; self.rows];
        let pooled = (0..self.cols)
            .map(|j| {
                for (i, c) in column.iter_mut().enumerate() {
                    *c = self.data[i * self.cols + j];
                }
                column.sort_unstable_by(f64::total_cmp);
                column.iter().sum::<f64>() / m
            })
            .collect();
        Ok(pooled)
    }
}

/// `out[i][j] += Σ_k a(i, k) · b[k][j]` with `k` ascending for every entry.
///
/// Output rows are processed in blocks of [`ROW_BLOCK`] so that each row of
/// `b` is streamed once per block instead of once per output row.
fn accumulate_products(
    out: &mut Matrix,
    b: &Matrix,
    inner: usize,
    a: impl Fn(usize, usize) -> f64,
) {
    let n = out.cols;
    if n == 0 {
        return;
    }
    let mut blocks = out.data.chunks_mut(ROW_BLOCK * n);
    let mut base = 0;
    for block in &mut blocks {
        let block_rows = block.len() / n;
        if block_rows == ROW_BLOCK {
            let (r0, rest) = block.split_at_mut(n);
            let (r1, rest) = rest.split_at_mut(n);
            let (r2, r3) = rest.split_at_mut(n);
            for k in 0..inner {
                let (a0, a1, a2, a3) = (a(base, k), a(base + 1, k), a(base + 2, k), a(base + 3, k));
                let brow = &b.data[k * n..(k + 1) * n];
                for j in 0..n {
                    let bv = brow[j];
                    r0[j] += a0 * bv;
                    r1[j] += a1 * bv;
                    r2[j] += a2 * bv;
                    r3[j] += a3 * bv;
                }
            }
        } else {
            for (offset, row) in block.chunks_mut(n).enumerate() {
                for k in 0..inner {
                    let av = a(base + offset, k);
                    let brow = &b.data[k * n..(k + 1) * n];
                    for (o, bv) in row.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
        base += block_rows;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}
