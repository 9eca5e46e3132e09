//! Dense kernels shared by the model, regularizers and oracle.
//!
//! Storage conventions, fixed crate-wide:
//!
//! - [`Matrix`] is row-major: entry `(i, j)` lives at `data[i * cols + j]`.
//! - [`DenseTensor`] is linearized first-index-fastest (reverse lexicographic):
//!   entry `(i_1, ..., i_N)` lives at `i_1 + i_2 I_1 + i_3 I_1 I_2 + ...`.
//!   This matches the usual `vec(X)` convention for CP factor products.

use std::fmt;

use crate::error::{Error, Result};

/// Largest number of entries a [`DenseTensor`] may hold.
pub const MAX_TENSOR_ENTRIES: usize = 10_000_000;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<&[f64]> = (0..self.rows).map(|i| self.row(i)).collect();
        f.debug_struct("Matrix")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("data", &rows)
            .finish()
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data; rejects wrong lengths and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite entry {} at ({}, {})",
                data[pos],
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Matrix::from_vec(rows.len(), cols, rows.concat())
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

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn scaled(&self, factor: f64) -> Matrix {
        let mut m = self.clone();
        m.scale(factor);
        m
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &Matrix, factor: f64) -> Result<()> {
        check_same_shape(self, other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
        Ok(())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                for (o, b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * other` without forming the transpose.
    pub fn transpose_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Dimension(format!(
                "cannot form A^T B for A {}x{} and B {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b_row = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, b) in out.row_mut(i).iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Row vector times matrix: `x^T * self`.
    pub fn vecmat(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::Dimension(format!(
                "vector of length {} against {}x{} matrix",
                x.len(),
                self.rows,
                self.cols
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += xi * a;
            }
        }
        Ok(out)
    }

    pub fn trace(&self) -> Result<f64> {
        if self.rows != self.cols {
            return Err(Error::Dimension(format!(
                "trace of non-square {}x{} matrix",
                self.rows, self.cols
            )));
        }
        Ok((0..self.rows).map(|i| self[(i, i)]).sum())
    }

    pub(crate) fn hadamard_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a *= b;
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

fn check_same_shape(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Elementwise product of two equally shaped matrices.
pub fn hadamard(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_same_shape(a, b)?;
    let mut out = a.clone();
    out.hadamard_assign(b);
    Ok(out)
}

/// Column-wise Kronecker product: `(I x R) ⊙ (J x R) -> (IJ x R)`.
///
/// Row `i * J + j` of the result is the elementwise product of row `i` of `a`
/// and row `j` of `b`, so column `r` equals `kron(a[:, r], b[:, r])`.
pub fn khatri_rao(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::Dimension(format!(
            "Khatri-Rao needs equal column counts, got {} and {}",
            a.cols, b.cols
        )));
    }
    let cols = a.cols;
    let mut out = Matrix::zeros(a.rows * b.rows, cols);
    for i in 0..a.rows {
        let ar = a.row(i);
        for j in 0..b.rows {
            let br = b.row(j);
            let dst = out.row_mut(i * b.rows + j);
            for r in 0..cols {
                dst[r] = ar[r] * br[r];
            }
        }
    }
    Ok(out)
}

/// Dense array over `N` modes, linearized first-index-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

/// Product of mode sizes, or a capacity error when it exceeds [`MAX_TENSOR_ENTRIES`].
pub fn checked_volume(dims: &[usize]) -> Result<usize> {
    let requested = dims
        .iter()
        .fold(1u128, |acc, &d| acc.saturating_mul(d as u128));
    if requested > MAX_TENSOR_ENTRIES as u128 {
        return Err(Error::Capacity {
            requested,
            limit: MAX_TENSOR_ENTRIES,
        });
    }
    Ok(requested as usize)
}

impl DenseTensor {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let len = checked_volume(dims)?;
        Ok(DenseTensor {
            dims: dims.to_vec(),
            data: vec![0.0; len],
        })
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = checked_volume(dims)?;
        if data.len() != len {
            return Err(Error::Dimension(format!(
                "{} values for tensor of shape {dims:?}",
                data.len()
            )));
        }
        Ok(DenseTensor {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn linear_index(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.dims.len() {
            return Err(Error::Dimension(format!(
                "index of length {} for tensor of order {}",
                index.len(),
                self.dims.len()
            )));
        }
        let mut offset = 0;
        let mut stride = 1;
        for (mode, (&i, &dim)) in index.iter().zip(&self.dims).enumerate() {
            if i >= dim {
                return Err(Error::Input(format!(
                    "index {i} out of range for mode {mode} of size {dim}"
                )));
            }
            offset += i * stride;
            stride *= dim;
        }
        Ok(offset)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.linear_index(index)?])
    }

    pub fn inner(&self, other: &DenseTensor) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::Dimension(format!(
                "inner product of shapes {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// Mode-`n` unfolding: rows indexed by mode `n`, columns by the remaining
    /// modes in first-index-fastest order.
    pub fn matricize(&self, mode: usize) -> Result<Matrix> {
        if mode >= self.dims.len() {
            return Err(Error::Dimension(format!(
                "mode {mode} of order-{} tensor",
                self.dims.len()
            )));
        }
        let rows = self.dims[mode];
        let cols = self.data.len().checked_div(rows).unwrap_or(0);
        let mut m = Matrix::zeros(rows, cols);
        for (lin, &v) in self.data.iter().enumerate() {
            let mut rest = lin;
            let mut col = 0;
            let mut col_stride = 1;
            let mut row = 0;
            for (k, &dim) in self.dims.iter().enumerate() {
                let i = rest % dim;
                rest /= dim;
                if k == mode {
                    row = i;
                } else {
                    col += i * col_stride;
                    col_stride *= dim;
                }
            }
            m[(row, col)] = v;
        }
        Ok(m)
    }
}

/// Iterates over every multi-index of `dims`, first index fastest.
pub struct MultiIndex {
    dims: Vec<usize>,
    current: Vec<usize>,
    started: bool,
    done: bool,
}

impl MultiIndex {
    pub fn new(dims: &[usize]) -> Self {
        MultiIndex {
            dims: dims.to_vec(),
            current: vec![0; dims.len()],
            started: false,
            done: dims.contains(&0),
        }
    }

    /// Advances to the next index; returns `None` when exhausted.
    pub fn next_index(&mut self) -> Option<&[usize]> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(&self.current);
        }
        for (i, dim) in self.current.iter_mut().zip(&self.dims) {
            *i += 1;
            if *i < *dim {
                return Some(&self.current);
            }
            *i = 0;
        }
        self.done = true;
        None
    }
}

/// Outer product `v_1 ∘ v_2 ∘ ... ∘ v_N` as a dense tensor.
pub fn outer_product_chain<V: AsRef<[f64]>>(vectors: &[V]) -> Result<DenseTensor> {
    if vectors.is_empty() {
        return Err(Error::Input("outer product of zero vectors".into()));
    }
    let dims: Vec<usize> = vectors.iter().map(|v| v.as_ref().len()).collect();
    checked_volume(&dims)?;
    // Mode 1 varies fastest, so grow the tensor by prepending the
    // accumulated block once per entry of each later vector.
    let mut data = vectors[0].as_ref().to_vec();
    for v in &vectors[1..] {
        let mut next = Vec::with_capacity(data.len() * v.as_ref().len());
        for &c in v.as_ref() {
            next.extend(data.iter().map(|&a| a * c));
        }
        data = next;
    }
    DenseTensor::from_vec(&dims, data)
}
