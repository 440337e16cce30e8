//! Second-difference (discrete Laplacian) operator used for curvature regularization.

use nalgebra::DMatrix;

use crate::error::{check_len, Result, UnfoldError};

/// `(M-2) x M` matrix whose row `r` is `(-1, 2, -1)` at columns `r..r+3`.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    matrix: DMatrix<f64>,
}

impl Laplacian {
    pub fn new(n_bins: usize) -> Result<Self> {
        if n_bins < 3 {
            return Err(UnfoldError::invalid(format!(
                "curvature penalty needs at least 3 bins, got {n_bins}; use lambda = 0"
            )));
        }
        let mut matrix = DMatrix::zeros(n_bins - 2, n_bins);
        for r in 0..n_bins - 2 {
            matrix[(r, r)] = -1.0;
            matrix[(r, r + 1)] = 2.0;
            matrix[(r, r + 2)] = -1.0;
        }
        Ok(Self { matrix })
    }

    pub fn n_bins(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `D z`
    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("laplacian input", self.n_bins(), z.len())?;
        Ok(z.windows(3).map(|w| -w[0] + 2.0 * w[1] - w[2]).collect())
    }

    /// `||D z||^2`
    pub fn penalty(&self, z: &[f64]) -> Result<f64> {
        Ok(self.apply(z)?.iter().map(|v| v * v).sum())
    }

    /// `D^T D`, the `M x M` curvature Gram matrix.
    pub fn gram(&self) -> DMatrix<f64> {
        self.matrix.transpose() * &self.matrix
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_operator() {
        let d = Laplacian::new(3).unwrap();
        assert_eq!(d.matrix().nrows(), 1);
        assert_eq!(d.matrix().row(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 2.0, -1.0]);
    }

    #[test]
    fn linear_sequence_vanishes() {
        let d = Laplacian::new(5).unwrap();
        assert_eq!(d.apply(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn zigzag_penalty() {
        let d = Laplacian::new(4).unwrap();
        let z = [0.0, 1.0, 0.0, 1.0];
        assert_eq!(d.apply(&z).unwrap(), vec![2.0, -2.0]);
        assert_eq!(d.penalty(&z).unwrap(), 8.0);
    }

    #[test]
    fn matrix_and_stencil_agree() {
        let d = Laplacian::new(6).unwrap();
        let z = [3.0, -1.0, 4.0, 1.0, -5.0, 9.0];
        let via_matrix = d.matrix() * nalgebra::DVector::from_row_slice(&z);
        let via_stencil = d.apply(&z).unwrap();
        for (a, b) in via_matrix.iter().zip(&via_stencil) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn too_few_bins() {
        assert!(Laplacian::new(2).is_err());
        assert!(Laplacian::new(0).is_err());
    }
}
