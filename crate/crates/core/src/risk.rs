//! The known-direction submodel, its oracle unbiased estimator, and the
//! resulting lower bound on the mean absolute deviation of unbiased
//! estimators.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::mc::{self, MeanAcc, StreamKey};
use crate::single::beta_u_parts;
use crate::stats::{InstrumentBlock, ReducedFormStats};

/// GLS projection of `ξ` onto the direction `π*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubmodelStats {
    pub xi_star: Vector2<f64>,
    pub sigma_star: Matrix2<f64>,
}

impl SubmodelStats {
    pub fn block(&self) -> Result<InstrumentBlock> {
        InstrumentBlock::new(
            self.xi_star[0],
            self.xi_star[1],
            self.sigma_star[(0, 0)],
            self.sigma_star[(0, 1)],
            self.sigma_star[(1, 1)],
        )
    }
}

/// `Σ*` and the 2×2k map `G = Σ* P′ Σ⁻¹` with `P = I₂ ⊗ π*`, so `ξ* = Gξ`.
struct Projection {
    g: DMatrix<f64>,
    sigma_star: Matrix2<f64>,
}

fn projection(sigma: &DMatrix<f64>, pi_star: &DVector<f64>) -> Result<Projection> {
    let k = pi_star.len();
    if sigma.nrows() != 2 * k || sigma.ncols() != 2 * k {
        return Err(Error::Dimension(format!("sigma must be {0}x{0}", 2 * k)));
    }
    if pi_star.iter().all(|&v| v == 0.0) || pi_star.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("the direction π* must be finite and non-zero".into()));
    }
    let mut p = DMatrix::<f64>::zeros(2 * k, 2);
    for i in 0..k {
        p[(i, 0)] = pi_star[i];
        p[(k + i, 1)] = pi_star[i];
    }
    let chol = linalg::cholesky(sigma, "sigma")?;
    let sinv_p = chol.solve(&p);
    let info = p.transpose() * &sinv_p;
    let info = Matrix2::new(info[(0, 0)], info[(0, 1)], info[(1, 0)], info[(1, 1)]);
    let sigma_star = info
        .try_inverse()
        .ok_or_else(|| Error::Conditioning("submodel information matrix is singular".into()))?;
    let sigma_star = (sigma_star + sigma_star.transpose()) * 0.5;
    let ss = DMatrix::from_column_slice(2, 2, sigma_star.as_slice());
    let g = ss * sinv_p.transpose();
    Ok(Projection { g, sigma_star })
}

/// `ξ*(π*) = Σ*P′Σ⁻¹ξ` and `Σ*(π*) = (P′Σ⁻¹P)⁻¹`.
pub fn submodel_stats(stats: &ReducedFormStats, pi_star: &DVector<f64>) -> Result<SubmodelStats> {
    if pi_star.len() != stats.k() {
        return Err(Error::Dimension(format!("π* must have length {}", stats.k())));
    }
    let proj = projection(stats.sigma(), pi_star)?;
    let x = &proj.g * stats.stacked();
    Ok(SubmodelStats { xi_star: Vector2::new(x[0], x[1]), sigma_star: proj.sigma_star })
}

/// `β̂_U(ξ*(π*), Σ*(π*))`.
pub fn oracle_beta(stats: &ReducedFormStats, pi_star: &DVector<f64>) -> Result<f64> {
    let sub = submodel_stats(stats, pi_star)?;
    let b = sub.block()?;
    Ok(beta_u_parts(b.xi1, b.xi2, b.s12, b.s22))
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McValue {
    pub value: f64,
    pub std_error: f64,
    pub draws: u64,
}

impl From<MeanAcc> for McValue {
    fn from(a: MeanAcc) -> Self {
        Self { value: a.mean, std_error: a.std_error(), draws: a.n }
    }
}

/// Monte Carlo `E|β̂_U(ξ*(π), Σ*(π)) − β|` at `ξ ~ N((βπ′, π′)′, Σ)`.
pub fn mad_lower_bound(
    pi: &DVector<f64>,
    beta: f64,
    sigma: &DMatrix<f64>,
    n_draws: usize,
    key: StreamKey,
) -> Result<McValue> {
    if n_draws < 1000 {
        return Err(Error::Domain("the bound needs at least 1000 draws".into()));
    }
    let k = pi.len();
    let sigma = linalg::symmetrize(sigma, "sigma")?;
    let proj = projection(&sigma, pi)?;
    let l = linalg::cholesky_with_jitter(&sigma, "sigma")?;
    // ξ* = G(μ + Lz) = Gμ + (GL)z.
    let mean = DVector::from_fn(2 * k, |r, _| if r < k { beta * pi[r] } else { pi[r - k] });
    let centre = &proj.g * mean;
    let gl = &proj.g * l;
    let (s12, s22) = (proj.sigma_star[(0, 1)], proj.sigma_star[(1, 1)]);
    let n = 2 * k;
    let acc = mc::mean(n_draws, key, |rng| {
        let (mut x1, mut x2) = (centre[0], centre[1]);
        for j in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            x1 += gl[(0, j)] * z;
            x2 += gl[(1, j)] * z;
        }
        (beta_u_parts(x1, x2, s12, s22) - beta).abs()
    });
    Ok(acc.into())
}
