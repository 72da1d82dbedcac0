//! Weight initialization: small-variance normal draws, with square
//! matrices replaced by random orthogonal ones.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tensor::Matrix;

/// Initialization contract for model weights. Defaults to draws from
/// `Normal(center, std)` with `std = 0.01`, except square matrices which
/// get a random orthogonal matrix. A nonzero `center` (used by the
/// robustness probe) disables the orthogonal special case so the shift
/// applies uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitScheme {
    pub std: f64,
    pub center: f64,
    pub orthogonal_square: bool,
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme {
            std: 0.01,
            center: 0.0,
            orthogonal_square: true,
        }
    }
}

impl InitScheme {
    pub fn with_center(center: f64) -> Self {
        InitScheme {
            center,
            ..InitScheme::default()
        }
    }

    pub fn matrix(&self, rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
        if rows == cols && self.orthogonal_square && self.center == 0.0 {
            return random_orthogonal(rows, rng);
        }
        let dist = Normal::new(self.center, self.std).expect("finite init parameters");
        Matrix::from_rows_vec((0..rows * cols).map(|_| dist.sample(rng)).collect(), rows, cols)
            .expect("init shape")
    }
}

/// Random orthogonal matrix via modified Gram-Schmidt on a Gaussian
/// draw. Columns are orthonormal; the R diagonal is kept positive so the
/// distribution does not depend on sign conventions.
pub fn random_orthogonal(n: usize, rng: &mut impl Rng) -> Matrix {
    let dist = Normal::new(0.0, 1.0).unwrap();
    // Column-major scratch: cols[j][i] is entry (i, j).
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| dist.sample(rng)).collect())
        .collect();
    for j in 0..n {
        for k in 0..j {
            let mut dot = 0.0;
            for i in 0..n {
                dot += cols[k][i] * cols[j][i];
            }
            for i in 0..n {
                cols[j][i] -= dot * cols[k][i];
            }
        }
        let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            // A dependent draw is measure-zero; restart the column.
            for v in cols[j].iter_mut() {
                *v = dist.sample(rng);
            }
            let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in cols[j].iter_mut() {
                *v /= norm;
            }
            continue;
        }
        for v in cols[j].iter_mut() {
            *v /= norm;
        }
    }
    let mut m = Matrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            m.set(i, j, cols[j][i]);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_matrix_has_orthonormal_columns() {
        let mut rng = crate::util::rng_for(5, &[30]);
        let q = random_orthogonal(16, &mut rng);
        for j in 0..16 {
            for k in j..16 {
                let mut dot = 0.0;
                for i in 0..16 {
                    dot += q.get(i, j) * q.get(i, k);
                }
                let expected = if j == k { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-10, "col {j}.{k}: {dot}");
            }
        }
    }

    #[test]
    fn square_matrices_are_orthogonal_by_default() {
        let mut rng = crate::util::rng_for(6, &[31]);
        let scheme = InitScheme::default();
        let q = scheme.matrix(8, 8, &mut rng);
        // Row norms of an orthogonal matrix are 1, far from 0.01-scale draws.
        let row_norm: f64 = q.row(0).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((row_norm - 1.0).abs() < 1e-10);
        let w = scheme.matrix(8, 4, &mut rng);
        let spread = w.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(spread < 0.1, "non-square init should be 0.01-scale, got {spread}");
    }

    #[test]
    fn shifted_center_moves_the_mean() {
        let mut rng = crate::util::rng_for(7, &[32]);
        let scheme = InitScheme::with_center(0.2);
        let w = scheme.matrix(16, 16, &mut rng);
        let mean: f64 = w.data().iter().sum::<f64>() / w.data().len() as f64;
        assert!((mean - 0.2).abs() < 0.01, "mean {mean}");
    }
}
