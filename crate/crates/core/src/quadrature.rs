//! Quadrature rules for expectations over normal first stages.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Gauss–Hermite rule for `E[f(Z)]`, `Z ~ N(0, 1)`, from the Golub–Welsch
/// eigenproblem. Returns `(nodes, weights)` with weights summing to one.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::Domain("a quadrature rule needs at least one node".into()));
    }
    // Jacobi matrix of the probabilists' Hermite polynomials.
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    Ok((
        pairs.iter().map(|p| p.0).collect(),
        pairs.iter().map(|p| p.1 / total).collect(),
    ))
}

/// Trapezoid rule in `s` for `∫ f(x) dx` under `x = center + sinh(s)`,
/// `s ∈ [−asinh(reach), asinh(reach)]`. Returns `(nodes, weights)`.
pub fn sinh_trapezoid(center: f64, reach: f64, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n < 3 || !(reach > 0.0) {
        return Err(Error::Domain("sinh rule needs n ≥ 3 and a positive reach".into()));
    }
    let l = reach.asinh();
    let h = 2.0 * l / (n - 1) as f64;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let s = -l + h * i as f64;
        let end = if i == 0 || i + 1 == n { 0.5 } else { 1.0 };
        nodes.push(center + s.sinh());
        weights.push(end * h * s.cosh());
    }
    Ok((nodes, weights))
}
