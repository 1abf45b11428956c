//! Dense row-major matrices and the vector kernels shared by every other
//! module: normalization, dot/cosine similarity, gram matrices and
//! temperature-scaled row softmax.
//!
//! Everything here is double precision. Feature rows are expected to be
//! unit norm where a function says so, but nothing is renormalized behind
//! the caller's back.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are treated as the zero vector.
pub const ZERO_NORM: f64 = 1e-30;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// A set of embedding rows of a shared dimension (either modality).
pub type FeatureMatrix = Matrix;
/// Square matrix of pairwise similarities.
pub type SimilarityMatrix = Matrix;

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows. An empty input yields a 0x0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact panics on a zero chunk size.
        let cols = self.cols.max(1);
        let n = if self.cols == 0 { 0 } else { self.rows };
        self.data.chunks_exact(cols).take(n)
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

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows `indices[0], indices[1], ...` stacked into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Submatrix `M[idx, idx]`.
    pub fn select_square(&self, idx: &[usize]) -> Matrix {
        let n = idx.len();
        let mut out = Matrix::zeros(n, n);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                out[(a, b)] = self[(i, j)];
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    /// `self * v`
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        self.iter_rows().map(|r| dot(r, v)).collect()
    }

    /// `selfᵀ * v`
    pub fn matvec_t(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &s) in self.iter_rows().zip(v) {
            axpy(s, r, &mut out);
        }
        out
    }

    /// `self * other`
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        check_dim(self.cols, other.rows)?;
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, other.row(k), dst);
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_scaled(&mut self, s: f64, other: &Matrix) -> Result<()> {
        check_dim(self.rows, other.rows)?;
        check_dim(self.cols, other.cols)?;
        axpy(s, &other.data, &mut self.data);
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Returns a copy with every row scaled to unit norm.
    pub fn normalized_rows(&self) -> Result<Matrix> {
        let mut out = self.clone();
        for i in 0..out.rows {
            normalize_in_place(out.row_mut(i))?;
        }
        Ok(out)
    }

    /// True if every row has unit norm within `tol`.
    pub fn rows_unit_norm(&self, tol: f64) -> bool {
        self.iter_rows().all(|r| (norm(r) - 1.0).abs() <= tol)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `y += a * x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let mut out = v.to_vec();
    normalize_in_place(&mut out)?;
    Ok(out)
}

/// Normalizes in place and returns the original norm.
pub fn normalize_in_place(v: &mut [f64]) -> Result<f64> {
    let n = norm(v);
    if !(n >= ZERO_NORM) {
        return Err(Error::ZeroVector { norm: n });
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(n)
}

/// Dot product of two (assumed unit-norm) vectors.
pub fn cosine_similarity(f: &[f64], t: &[f64]) -> Result<f64> {
    check_dim(f.len(), t.len())?;
    Ok(dot(f, t))
}

/// `F Fᵀ`
pub fn gram_matrix(features: &Matrix) -> SimilarityMatrix {
    let n = features.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        out[(i, i)] = dot(features.row(i), features.row(i));
        for j in (i + 1)..n {
            let s = dot(features.row(i), features.row(j));
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    out
}

/// `F Tᵀ`
pub fn cross_gram(f: &Matrix, t: &Matrix) -> Result<Matrix> {
    check_dim(f.cols(), t.cols())?;
    let mut out = Matrix::zeros(f.rows(), t.rows());
    for i in 0..f.rows() {
        for j in 0..t.rows() {
            out[(i, j)] = dot(f.row(i), t.row(j));
        }
    }
    Ok(out)
}

/// Writes `softmax(row / tau)` into `out`, subtracting the row max first.
pub fn softmax_into(row: &[f64], tau: f64, out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = ((x - max) / tau).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// `log softmax(row / tau)`, stable for large logits.
pub fn log_softmax(row: &[f64], tau: f64) -> Vec<f64> {
    let top = argmax(row);
    let max = row[top];
    // ln(1 + Σ_{j≠top} e^{…}) keeps full precision when the row is nearly one-hot.
    let rest: f64 = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != top)
        .map(|(_, &x)| ((x - max) / tau).exp())
        .sum();
    let lse = rest.ln_1p();
    row.iter().map(|&x| (x - max) / tau - lse).collect()
}

pub fn softmax_rows(m: &Matrix, tau: f64) -> Result<Matrix> {
    if !(tau > 0.0) {
        return Err(Error::NonPositiveTemperature(tau));
    }
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for i in 0..m.rows() {
        softmax_into(m.row(i), tau, out.row_mut(i));
    }
    Ok(out)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}
