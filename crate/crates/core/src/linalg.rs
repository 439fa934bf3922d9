//! Small dense helpers shared by the filter, gain and Riccati code.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Tolerance on relative asymmetry before a covariance is symmetrized.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// `||M - M^T||_F / ||M||_F`, zero for the zero matrix.
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).norm() / norm
}

/// `(M + M^T) / 2` after checking the asymmetry is within `tolerance`.
pub fn symmetrize_checked(m: DMatrix<f64>, tolerance: f64) -> Result<DMatrix<f64>> {
    let asymmetry = relative_asymmetry(&m);
    if asymmetry > tolerance {
        return Err(Error::Asymmetric { asymmetry, tolerance });
    }
    Ok(symmetrize(m))
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Symmetric PSD square root; eigenvalues below `floor_rel * max` are zeroed.
pub fn psd_sqrt(m: &DMatrix<f64>, floor_rel: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.max().max(0.0);
    let root = eig.eigenvalues.map(|v| if v <= floor_rel * max { 0.0 } else { v.sqrt() });
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose();
    symmetrize(out)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// `max |a - b|` entrywise.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
}

/// `||a - b||_F / ||b||_F`, falling back to the absolute gap when `b = 0`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let gap = (a - b).norm();
    let scale = b.norm();
    if scale == 0.0 {
        gap
    } else {
        gap / scale
    }
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.is_square() && relative_asymmetry(m) <= SYMMETRY_TOLERANCE && m.clone().cholesky().is_some()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_of_diagonal() {
        let s = DMatrix::from_diagonal_element(2, 2, 1.0);
        assert!((psd_sqrt(&s, 1e-12) - &s).norm() < 1e-14);
        let s = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 0.0]);
        let g = psd_sqrt(&s, 1e-12);
        assert!((g - DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0])).norm() < 1e-14);
    }

    #[test]
    fn asymmetry_is_checked() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(symmetrize_checked(m.clone(), 1e-10).is_err());
        let s = symmetrize_checked(m, 1.0).unwrap();
        assert_eq!(s[(0, 1)], s[(1, 0)]);
    }

    #[test]
    fn definiteness() {
        assert!(is_positive_definite(&DMatrix::identity(3, 3)));
        assert!(!is_positive_definite(&DMatrix::from_diagonal_element(2, 2, 0.0)));
    }
}
