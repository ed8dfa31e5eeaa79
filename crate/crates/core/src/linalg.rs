//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Relative asymmetry tolerated before a matrix is rejected as non-symmetric.
const SYMMETRY_TOL: f64 = 1e-10;

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Checks approximate symmetry and returns `(m + m')/2`.
pub fn symmetrize(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("{what} has non-finite entries")));
    }
    let scale = max_abs(m).max(f64::MIN_POSITIVE);
    let asym = max_abs(&(m - m.transpose()));
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::Domain(format!(
            "{what} is not symmetric (max asymmetry {asym:.3e})"
        )));
    }
    Ok((m + m.transpose()) * 0.5)
}

/// Lower Cholesky factor of a symmetric matrix. On failure the diagonal is
/// loaded with `1e-12 * trace / n` and the factorization retried once.
pub fn cholesky_with_jitter(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c.l());
    }
    let n = m.nrows().max(1) as f64;
    let jitter = 1e-12 * m.trace().abs() / n;
    let mut loaded = m.clone();
    for i in 0..m.nrows() {
        loaded[(i, i)] += jitter;
    }
    Cholesky::new(loaded).map(|c| c.l()).ok_or_else(|| {
        Error::Conditioning(format!("{what} is not positive definite"))
    })
}

/// Cholesky factorization without jitter, used for positive-definiteness checks.
pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
        .ok_or_else(|| Error::Conditioning(format!("{what} is not positive definite")))
}

/// Inverse of a symmetric positive definite matrix, symmetrized.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let inv = cholesky(m, what)?.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// `I₂ ⊗ m`.
pub fn kron_i2(m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::<f64>::identity(2, 2).kronecker(m)
}
