//! Small dense row-major matrices and the triangular kernels used by
//! static condensation.

use serde::{Deserialize, Serialize};
use std::ops::{Index, IndexMut};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major buffer has wrong length");
        Self { rows, cols, data }
    }

    /// Builds a symmetric matrix from its row-major lower triangle
    /// (`n(n+1)/2` entries).
    pub fn from_lower(n: usize, lower: &[f64]) -> Option<Self> {
        if lower.len() != n * (n + 1) / 2 {
            return None;
        }
        let mut m = Self::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in 0..=i {
                m[(i, j)] = lower[k];
                m[(j, i)] = lower[k];
                k += 1;
            }
        }
        Some(m)
    }

    pub fn lower_triangle(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows * (self.rows + 1) / 2);
        for i in 0..self.rows {
            out.extend_from_slice(&self.row(i)[..=i]);
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// In-place forward substitution `L y = b` for a lower-triangular `l`.
pub(crate) fn forward_solve(l: &DenseMatrix, b: &mut [f64]) {
    for i in 0..l.rows() {
        let row = l.row(i);
        let mut s = b[i];
        for k in 0..i {
            s -= row[k] * b[k];
        }
        b[i] = s / row[i];
    }
}

/// In-place backward substitution `Lᵀ x = y` for a lower-triangular `l`.
pub(crate) fn backward_solve_transposed(l: &DenseMatrix, y: &mut [f64]) {
    let n = l.rows();
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lower_triangle_round_trip() {
        let m = DenseMatrix::from_row_major(3, 3, vec![4.0, 1.0, 2.0, 1.0, 5.0, 3.0, 2.0, 3.0, 6.0]);
        let lower = m.lower_triangle();
        assert_eq!(lower, vec![4.0, 1.0, 5.0, 2.0, 3.0, 6.0]);
        assert_eq!(DenseMatrix::from_lower(3, &lower).unwrap(), m);
        assert!(DenseMatrix::from_lower(3, &lower[..5]).is_none());
    }

    #[test]
    fn triangular_solves() {
        let l = DenseMatrix::from_row_major(2, 2, vec![2.0, 0.0, 1.0, 3.0]);
        let mut b = vec![4.0, 11.0];
        forward_solve(&l, &mut b);
        assert_eq!(b, vec![2.0, 3.0]);
        let mut y = vec![5.0, 6.0];
        backward_solve_transposed(&l, &mut y);
        // Lᵀ = [[2,1],[0,3]]
        assert_eq!(y, vec![1.5, 2.0]);
    }
}
