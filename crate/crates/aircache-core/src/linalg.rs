//! Dense row-major matrices and the handful of kernels the pipeline needs:
//! matrix multiply, numerically stable (masked) row softmax, and mean/std
//! reductions. Everything is f64; matrices are desk-scale.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row-major data. Panics if the length is wrong.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        Matrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Copies a contiguous block of rows.
    pub fn slice_rows(&self, start: usize, len: usize) -> Matrix {
        assert!(start + len <= self.rows);
        Matrix {
            rows: len,
            cols: self.cols,
            data: self.data[start * self.cols..(start + len) * self.cols].to_vec(),
        }
    }

    /// Copies the listed rows, in order.
    pub fn gather_rows(&self, indices: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(indices.len(), self.cols);
        for (dst, &src) in indices.iter().enumerate() {
            out.row_mut(dst).copy_from_slice(self.row(src));
        }
        out
    }

    /// Copies a contiguous block of columns.
    pub fn slice_cols(&self, start: usize, len: usize) -> Matrix {
        assert!(start + len <= self.cols);
        let mut out = Matrix::zeros(self.rows, len);
        for r in 0..self.rows {
            out.row_mut(r)
                .copy_from_slice(&self.row(r)[start..start + len]);
        }
        out
    }

    /// Stacks `other` below `self`. Column counts must match.
    pub fn vstack(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols);
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.cols);
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Standard dense product. Errors when inner dimensions disagree.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix, CoreError> {
    if a.cols != b.rows {
        return Err(CoreError::Shape {
            expected: (a.cols, b.rows),
            got: (b.rows, b.cols),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a_row.iter().enumerate() {
            let b_row = b.row(k);
            for (o, &bkj) in out_row.iter_mut().zip(b_row.iter()) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// Causal mask over a subset of columns: query row `i` may not attend to
/// masked-subset column `j` when `positions[j] > positions[i]`, where
/// positions are original sequence indices. Columns outside the subset are
/// always visible.
#[derive(Debug, Clone)]
pub struct CausalColumnMask {
    /// First column index the mask applies to.
    pub col_start: usize,
    /// Original sequence position of each masked-subset column.
    pub col_positions: Vec<usize>,
    /// Original sequence position of each query row.
    pub row_positions: Vec<usize>,
}

impl CausalColumnMask {
    fn is_masked(&self, row: usize, col: usize) -> bool {
        if col < self.col_start {
            return false;
        }
        let j = col - self.col_start;
        j < self.col_positions.len() && self.col_positions[j] > self.row_positions[row]
    }
}

/// Row-wise softmax with max-subtraction, optionally under a causal column
/// mask. Masked entries are exactly zero in the output.
pub fn softmax_rows(a: &Matrix, mask: Option<&CausalColumnMask>) -> Result<Matrix, CoreError> {
    let mut out = Matrix::zeros(a.rows, a.cols);
    for r in 0..a.rows {
        let row = a.row(r);
        let mut max = f64::NEG_INFINITY;
        for (c, &x) in row.iter().enumerate() {
            if mask.is_some_and(|m| m.is_masked(r, c)) {
                continue;
            }
            if x > max {
                max = x;
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(CoreError::DegenerateMask { row: r });
        }
        let mut sum = 0.0;
        let out_row = out.row_mut(r);
        for (c, &x) in row.iter().enumerate() {
            if mask.is_some_and(|m| m.is_masked(r, c)) {
                out_row[c] = 0.0;
            } else {
                let e = libm::exp(x - max);
                out_row[c] = e;
                sum += e;
            }
        }
        for v in out_row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

/// Mean of a vector. Errors on empty input.
pub fn mean(v: &[f64]) -> Result<f64, CoreError> {
    if v.is_empty() {
        return Err(CoreError::InsufficientData { needed: 1, got: 0 });
    }
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Mean and sample standard deviation (n-1 denominator).
pub fn mean_std(v: &[f64]) -> Result<(f64, f64), CoreError> {
    if v.len() < 2 {
        return Err(CoreError::InsufficientData {
            needed: 2,
            got: v.len(),
        });
    }
    let mu = mean(v)?;
    let ss: f64 = v.iter().map(|x| (x - mu) * (x - mu)).sum();
    Ok((mu, libm::sqrt(ss / (v.len() - 1) as f64)))
}
