//! Dense linear-algebra helpers shared by the reservoir, readout and
//! diagnostics code.

use nalgebra::{Cholesky, DMatrix, DVector, Schur, SVD};

use crate::error::{Error, Result};

/// Largest eigenvalue magnitude of a square matrix, from its real Schur form.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    assert!(m.is_square(), "spectral radius of a non-square matrix");
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let max_iter = 1000 * m.nrows().max(10);
    let schur = Schur::try_new(m.clone(), f64::EPSILON, max_iter)
        .ok_or(Error::NonFinite("eigenvalue iteration"))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DVector::zeros(0);
    }
    // Bidiagonalisation is cheaper on the wide orientation.
    let sv = if m.nrows() >= m.ncols() {
        SVD::new(m.clone(), false, false).singular_values
    } else {
        SVD::new(m.transpose(), false, false).singular_values
    };
    let mut v: Vec<f64> = sv.iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    DVector::from_vec(v)
}

/// Spectral norm, i.e. the largest singular value.
pub fn max_singular_value(m: &DMatrix<f64>) -> f64 {
    singular_values(m).iter().copied().next().unwrap_or(0.0)
}

/// Solves `a * x = b` for symmetric positive-definite `a`.
pub fn solve_spd(a: DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = Cholesky::new(a).ok_or(Error::SingularSystem)?;
    let x = chol.solve(b);
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::SingularSystem)
    }
}

/// Euclidean distance between two equally sized slices.
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_has_unit_spectral_radius() {
        // Complex-conjugate pair of magnitude 0.8: a case plain power
        // iteration does not converge on.
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -0.8, 0.8, 0.0]);
        assert!((spectral_radius(&m).unwrap() - 0.8).abs() < 1e-14);
    }

    #[test]
    fn singular_values_descending() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 3.0, 0.0]);
        let s = singular_values(&m);
        assert_eq!(s.len(), 2);
        assert!((s[0] - 3.0).abs() < 1e-14 && (s[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn spd_solve_rejects_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DMatrix::from_element(2, 1, 1.0);
        assert!(matches!(solve_spd(a, &b), Err(Error::SingularSystem)));
    }
}
