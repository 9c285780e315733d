//! Dense matrices and masked rating matrices.
//!
//! `Matrix` is a plain row-major dense f64 matrix with just the operations
//! the pipeline needs. `RatingMatrix` pairs values with an observation mask:
//! entries whose mask bit is false are missing and are ignored by every norm
//! and by the recovery solver.

use std::ops::{Index, IndexMut};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatrixError {
    #[error("shape mismatch: {left_rows}x{left_cols} vs {right_rows}x{right_cols}")]
    ShapeMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("data length {len} does not match {rows}x{cols}")]
    BadLength {
        len: usize,
        rows: usize,
        cols: usize,
    },
    #[error("matrix entries must be finite")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, MatrixError> {
        if data.len() != rows * cols {
            return Err(MatrixError::BadLength {
                len: data.len(),
                rows,
                cols,
            });
        }
        Ok(Self { rows, cols, data })
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

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub(crate) fn shape_error(&self, other: &Matrix) -> MatrixError {
        MatrixError::ShapeMismatch {
            left_rows: self.rows,
            left_cols: self.cols,
            right_rows: other.rows,
            right_cols: other.cols,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Frobenius distance over the full matrix, no mask involved.
    pub fn frobenius_distance(&self, other: &Matrix) -> Result<f64, MatrixError> {
        if !self.same_shape(other) {
            return Err(self.shape_error(other));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Product with the transpose of `other`: self (m x r) times other^T
    /// (r x n) where other is n x r.
    pub fn mul_transpose(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.cols,
            "inner dimensions must agree for A * B^T"
        );
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let left_row = &self.data[i * self.cols..(i + 1) * self.cols];
            for j in 0..other.rows {
                let right_row = &other.data[j * other.cols..(j + 1) * other.cols];
                let acc: f64 = left_row.iter().zip(right_row).map(|(a, b)| a * b).sum();
                out.data[i * other.rows + j] = acc;
            }
        }
        out
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Values plus an observation mask. The mask is row-major, true = observed.
/// Unobserved cells always hold 0.0 so equality and serialization are
/// canonical.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    values: Matrix,
    mask: Vec<bool>,
}

impl RatingMatrix {
    /// All-missing matrix of the given shape.
    pub fn unobserved(rows: usize, cols: usize) -> Self {
        Self {
            values: Matrix::zeros(rows, cols),
            mask: vec![false; rows * cols],
        }
    }

    pub fn from_parts(values: Matrix, mask: Vec<bool>) -> Result<Self, MatrixError> {
        if mask.len() != values.rows() * values.cols() {
            return Err(MatrixError::BadLength {
                len: mask.len(),
                rows: values.rows(),
                cols: values.cols(),
            });
        }
        let mut values = values;
        for (idx, observed) in mask.iter().enumerate() {
            if !observed {
                values.data[idx] = 0.0;
            }
        }
        Ok(Self { values, mask })
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.cols() + j]
    }

    /// Value at (i, j); 0.0 whenever the cell is unobserved.
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn set_observed(&mut self, i: usize, j: usize, v: f64) {
        let idx = i * self.cols() + j;
        self.mask[idx] = true;
        self.values.data[idx] = v;
    }

    pub fn clear(&mut self, i: usize, j: usize) {
        let idx = i * self.cols() + j;
        self.mask[idx] = false;
        self.values.data[idx] = 0.0;
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn observed_fraction(&self) -> f64 {
        if self.mask.is_empty() {
            0.0
        } else {
            self.observed_count() as f64 / self.mask.len() as f64
        }
    }

    /// Frobenius norm of the observed entries.
    pub fn masked_frobenius_norm(&self) -> f64 {
        self.values
            .data
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_and_shape() {
        let mut a = Matrix::zeros(2, 3);
        a[(0, 2)] = 5.0;
        a[(1, 0)] = -1.5;
        assert_eq!(a[(0, 2)], 5.0);
        assert_eq!(a[(1, 0)], -1.5);
        assert_eq!(a.rows(), 2);
        assert_eq!(a.cols(), 3);
    }

    #[test]
    fn from_vec_length_check() {
        assert!(Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0]).is_err());
        assert!(Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).is_ok());
    }

    #[test]
    fn frobenius_basics() {
        let a = Matrix::from_vec(2, 2, vec![3.0, 0.0, 0.0, 4.0]).unwrap();
        assert_eq!(a.frobenius_norm(), 5.0);
        let b = Matrix::zeros(2, 2);
        assert_eq!(a.frobenius_distance(&b).unwrap(), 5.0);
        let c = Matrix::zeros(3, 2);
        assert!(a.frobenius_distance(&c).is_err());
    }

    #[test]
    fn mul_transpose_small() {
        // u = [1 2; 3 4], v = [1 0; 0 1] -> u * v^T = u.
        let u = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let v = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(u.mul_transpose(&v), u);
    }

    #[test]
    fn rating_matrix_zeroes_unobserved_cells() {
        let values = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let rm = RatingMatrix::from_parts(values, vec![true, false, false, true]).unwrap();
        assert_eq!(rm.value(0, 0), 1.0);
        assert_eq!(rm.value(0, 1), 0.0);
        assert_eq!(rm.value(1, 0), 0.0);
        assert_eq!(rm.value(1, 1), 4.0);
        assert_eq!(rm.observed_count(), 2);
        assert_eq!(rm.masked_frobenius_norm(), (1.0f64 + 16.0).sqrt());
    }

    #[test]
    fn set_and_clear_round_trip() {
        let mut rm = RatingMatrix::unobserved(2, 2);
        assert_eq!(rm.observed_count(), 0);
        rm.set_observed(0, 1, 2.5);
        assert!(rm.is_observed(0, 1));
        assert_eq!(rm.value(0, 1), 2.5);
        rm.clear(0, 1);
        assert!(!rm.is_observed(0, 1));
        assert_eq!(rm.value(0, 1), 0.0);
        assert_eq!(rm, RatingMatrix::unobserved(2, 2));
    }
}
