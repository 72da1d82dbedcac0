//! Minimal dense `f64` vectors and row-major matrices.
//!
//! Everything here uses fixed left-to-right accumulation so that repeated
//! calls on identical inputs are bit-identical; no pairwise or tree
//! reductions. Values are immutable in normal use and safe to share
//! across threads.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dense vector of 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vector(pub Vec<f64>);

/// Dense row-major matrix of 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Vector(data)
    }
}

impl Vector {
    /// Builds a vector from externally supplied data, rejecting NaN/Inf.
    pub fn checked(data: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("vector element [{i}] = {v}")));
        }
        Ok(Vector(data))
    }

    pub fn zeros(n: usize) -> Self {
        Vector(vec![0.0; n])
    }

    pub fn ones(n: usize) -> Self {
        Vector(vec![1.0; n])
    }

    pub fn filled(n: usize, value: f64) -> Self {
        Vector(vec![value; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    /// Arithmetic mean with sequential accumulation.
    pub fn mean(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        let mut acc = 0.0;
        for &v in &self.0 {
            acc += v;
        }
        acc / self.0.len() as f64
    }

    /// Sum of squared elements with sequential accumulation.
    pub fn sum_sq(&self) -> f64 {
        let mut acc = 0.0;
        for &v in &self.0 {
            acc += v * v;
        }
        acc
    }

    /// Element-wise multiplication by a scalar.
    pub fn scale(&self, alpha: f64) -> Vector {
        Vector(self.0.iter().map(|v| v * alpha).collect())
    }

    /// Element-wise addition of a scalar.
    pub fn shift(&self, delta: f64) -> Vector {
        Vector(self.0.iter().map(|v| v + delta).collect())
    }

    /// Element-wise product of two equal-length vectors.
    pub fn hadamard(&self, other: &Vector) -> Result<Vector> {
        if self.len() != other.len() {
            return Err(Error::shape("hadamard", self.len(), other.len()));
        }
        Ok(Vector(
            self.0.iter().zip(&other.0).map(|(a, b)| a * b).collect(),
        ))
    }

    pub fn add(&self, other: &Vector) -> Result<Vector> {
        if self.len() != other.len() {
            return Err(Error::shape("vector add", self.len(), other.len()));
        }
        Ok(Vector(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn sub(&self, other: &Vector) -> Result<Vector> {
        if self.len() != other.len() {
            return Err(Error::shape("vector sub", self.len(), other.len()));
        }
        Ok(Vector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    /// Dot product with sequential accumulation.
    pub fn dot(&self, other: &Vector) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::shape("dot", self.len(), other.len()));
        }
        let mut acc = 0.0;
        for (a, b) in self.0.iter().zip(&other.0) {
            acc += a * b;
        }
        Ok(acc)
    }

    /// Euclidean norm.
    pub fn norm2(&self) -> f64 {
        self.sum_sq().sqrt()
    }

    /// Largest absolute element (0 for the empty vector).
    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Matrix {
    /// Builds a matrix from row-major data; `data.len()` must equal
    /// `rows * cols`.
    pub fn from_rows_vec(data: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("matrix construction", rows * cols, data.len()));
        }
        Ok(Matrix { data, rows, cols })
    }

    /// Builds a matrix from externally supplied data, rejecting NaN/Inf.
    pub fn checked(data: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("matrix element [{i}] = {v}")));
        }
        Matrix::from_rows_vec(data, rows, cols)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            data: vec![0.0; rows * cols],
            rows,
            cols,
        }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
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

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Matrix-vector product `a_i = sum_j W[i,j] x[j]`, accumulated left to
    /// right within each row.
    pub fn matvec(&self, x: &Vector) -> Result<Vector> {
        if self.cols != x.len() {
            return Err(Error::shape("matvec", self.cols, x.len()));
        }
        let mut out = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            let mut acc = 0.0;
            for (w, xv) in self.row(i).iter().zip(&x.0) {
                acc += w * xv;
            }
            out.push(acc);
        }
        Ok(Vector(out))
    }

    /// Transposed product `W^T y`, used by backward passes.
    pub fn matvec_t(&self, y: &Vector) -> Result<Vector> {
        if self.rows != y.len() {
            return Err(Error::shape("matvec_t", self.rows, y.len()));
        }
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let yi = y.0[i];
            for (o, w) in out.iter_mut().zip(self.row(i)) {
                *o += yi * w;
            }
        }
        Ok(Vector(out))
    }

    /// Rank-one update `self += alpha * u v^T`.
    pub fn add_outer(&mut self, u: &Vector, v: &Vector, alpha: f64) -> Result<()> {
        if self.rows != u.len() || self.cols != v.len() {
            return Err(Error::shape(
                "add_outer",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", u.len(), v.len()),
            ));
        }
        for i in 0..self.rows {
            let ui = alpha * u.0[i];
            for (w, vj) in self.row_mut(i).iter_mut().zip(&v.0) {
                *w += ui * vj;
            }
        }
        Ok(())
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        Matrix {
            data: self.data.iter().map(|v| v * alpha).collect(),
            rows: self.rows,
            cols: self.cols,
        }
    }

    pub fn shift(&self, delta: f64) -> Matrix {
        Matrix {
            data: self.data.iter().map(|v| v + delta).collect(),
            rows: self.rows,
            cols: self.cols,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent triple-checked naive-loop oracle for matvec.
    fn matvec_oracle(w: &Matrix, x: &Vector) -> Vec<f64> {
        let mut out = vec![0.0; w.rows()];
        for i in 0..w.rows() {
            for j in 0..w.cols() {
                out[i] += w.get(i, j) * x[j];
            }
        }
        out
    }

    #[test]
    fn matvec_identity_is_identity() {
        let w = Matrix::identity(3);
        let x = Vector::from(vec![1.0, 2.0, 3.0]);
        assert_eq!(w.matvec(&x).unwrap().0, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn matvec_hand_arithmetic() {
        let w = Matrix::from_rows_vec(vec![1.0, 1.0, 2.0, 0.0], 2, 2).unwrap();
        let x = Vector::from(vec![3.0, 4.0]);
        assert_eq!(w.matvec(&x).unwrap().0, vec![7.0, 6.0]);
    }

    #[test]
    fn matvec_matches_naive_oracle_exactly() {
        use rand::Rng;
        let mut rng = crate::util::rng_for(42, &[1]);
        let data: Vec<f64> = (0..64).map(|_| rng.random_range(-2.0..2.0)).collect();
        let w = Matrix::from_rows_vec(data, 8, 8).unwrap();
        let x = Vector::from((0..8).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>());
        let got = w.matvec(&x).unwrap();
        // Same accumulation order, so the match must be bit-exact.
        assert_eq!(got.0, matvec_oracle(&w, &x));
    }

    #[test]
    fn matvec_shape_mismatch_errors() {
        let w = Matrix::identity(3);
        let x = Vector::from(vec![1.0, 2.0]);
        assert!(w.matvec(&x).is_err());
    }

    #[test]
    fn reductions_and_elementwise() {
        assert_eq!(Vector::from(vec![1.0, 2.0, 3.0]).mean(), 2.0);
        assert_eq!(Vector::from(vec![3.0, 4.0]).sum_sq(), 25.0);
        assert_eq!(Vector::from(vec![1.0, -2.0]).scale(0.5).0, vec![0.5, -1.0]);
        assert_eq!(Vector::from(vec![1.0, -2.0]).shift(1.0).0, vec![2.0, -1.0]);
        let u = Vector::from(vec![1.0, 2.0]);
        let v = Vector::from(vec![3.0, -1.0]);
        assert_eq!(u.hadamard(&v).unwrap().0, vec![3.0, -2.0]);
        assert!(u.hadamard(&Vector::zeros(3)).is_err());
    }

    #[test]
    fn repeated_calls_are_bit_identical() {
        use rand::Rng;
        let mut rng = crate::util::rng_for(7, &[2]);
        let data: Vec<f64> = (0..96).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = Matrix::from_rows_vec(data, 8, 12).unwrap();
        let x = Vector::from((0..12).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
        let a = w.matvec(&x).unwrap();
        let b = w.matvec(&x).unwrap();
        assert!(a.0.iter().zip(&b.0).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert_eq!(x.sum_sq().to_bits(), x.sum_sq().to_bits());
    }

    #[test]
    fn checked_rejects_non_finite() {
        assert!(Vector::checked(vec![1.0, f64::NAN]).is_err());
        assert!(Vector::checked(vec![1.0, f64::INFINITY]).is_err());
        assert!(Vector::checked(vec![1.0, 2.0]).is_ok());
        assert!(Matrix::checked(vec![1.0, f64::NAN], 1, 2).is_err());
    }

    #[test]
    fn transpose_product_agrees_with_explicit_transpose() {
        let w = Matrix::from_rows_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2, 3).unwrap();
        let y = Vector::from(vec![1.0, -1.0]);
        // W^T y computed by hand: columns dotted with y.
        assert_eq!(w.matvec_t(&y).unwrap().0, vec![-3.0, -3.0, -3.0]);
    }
}
