//! From a raw table to `(ξ̂, Σ̂)`: partial out controls, fit the reduced form
//! and first stage, and estimate their joint covariance.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::normal;
use crate::stats::ReducedFormStats;

/// Relative rank tolerance for regressor matrices.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct IvDataset {
    pub y: DVector<f64>,
    pub x: DVector<f64>,
    /// T×k instruments.
    pub z: DMatrix<f64>,
    /// T×p exogenous controls, including any intercept column.
    pub controls: DMatrix<f64>,
    pub cluster_ids: Option<Vec<i64>>,
    pub z_names: Vec<String>,
    pub control_names: Vec<String>,
}

impl IvDataset {
    pub fn new(
        y: DVector<f64>,
        x: DVector<f64>,
        z: DMatrix<f64>,
        controls: DMatrix<f64>,
        cluster_ids: Option<Vec<i64>>,
    ) -> Result<Self> {
        let t = y.len();
        let (k, p) = (z.ncols(), controls.ncols());
        if x.len() != t || z.nrows() != t || controls.nrows() != t {
            return Err(Error::Input("all columns must have the same number of rows".into()));
        }
        if let Some(c) = &cluster_ids {
            if c.len() != t {
                return Err(Error::Input("cluster ids must have one entry per row".into()));
            }
        }
        if k == 0 {
            return Err(Error::Input("at least one instrument is required".into()));
        }
        if t <= k + p {
            return Err(Error::Input(format!(
                "need more observations ({t}) than instruments plus controls ({})",
                k + p
            )));
        }
        if y.iter().chain(x.iter()).chain(z.iter()).chain(controls.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Input("data contain non-finite values".into()));
        }
        Ok(Self {
            y,
            x,
            z,
            controls,
            cluster_ids,
            z_names: (1..=k).map(|i| format!("z{i}")).collect(),
            control_names: (1..=p).map(|i| format!("w{i}")).collect(),
        })
    }

    pub fn k(&self) -> usize {
        self.z.ncols()
    }
}

/// Coefficients and residuals of the reduced-form and first-stage fits.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedReducedForm {
    pub xi1: DVector<f64>,
    pub xi2: DVector<f64>,
    pub residuals_u: DVector<f64>,
    pub residuals_v: DVector<f64>,
}

impl FittedReducedForm {
    /// Pairs the coefficients with an estimated covariance.
    pub fn stats(&self, sigma: DMatrix<f64>) -> Result<ReducedFormStats> {
        ReducedFormStats::new(self.xi1.clone(), self.xi2.clone(), sigma)
    }
}

/// Indices of columns that are numerically linear combinations of earlier
/// ones (modified Gram–Schmidt with one reorthogonalization pass).
fn dependent_columns(m: &DMatrix<f64>) -> Vec<usize> {
    let scale = m.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for (j, col) in m.column_iter().enumerate() {
        let mut v = col.into_owned();
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let n = v.norm();
        if n <= RANK_TOL * scale.max(f64::MIN_POSITIVE) {
            dependent.push(j);
        } else {
            basis.push(v / n);
        }
    }
    dependent
}

/// Thin orthonormal basis of the column space of a full-rank matrix.
fn orthonormal_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().qr().q()
}

fn project_off(q: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    // Two passes keep the residual orthogonal to working precision.
    let once = v - q * (q.transpose() * v);
    &once - q * (q.transpose() * &once)
}

/// Residuals of `y`, `x` and each instrument after regressing on the controls.
pub fn residualize(dataset: &IvDataset) -> Result<(DVector<f64>, DVector<f64>, DMatrix<f64>)> {
    if dataset.controls.ncols() == 0 {
        return Ok((dataset.y.clone(), dataset.x.clone(), dataset.z.clone()));
    }
    let dep = dependent_columns(&dataset.controls);
    if !dep.is_empty() {
        let names: Vec<&str> = dep.iter().map(|&j| dataset.control_names[j].as_str()).collect();
        return Err(Error::Input(format!(
            "controls are rank deficient; dependent columns: {}",
            names.join(", ")
        )));
    }
    let q = orthonormal_basis(&dataset.controls);
    let y = project_off(&q, &DMatrix::from_column_slice(dataset.y.len(), 1, dataset.y.as_slice()));
    let x = project_off(&q, &DMatrix::from_column_slice(dataset.x.len(), 1, dataset.x.as_slice()));
    let z = project_off(&q, &dataset.z);
    let zdep = dependent_columns(&z);
    if !zdep.is_empty() {
        let names: Vec<&str> = zdep.iter().map(|&j| dataset.z_names[j].as_str()).collect();
        return Err(Error::Input(format!(
            "instruments are rank deficient after partialling out controls; dependent columns: {}",
            names.join(", ")
        )));
    }
    Ok((y.column(0).into_owned(), x.column(0).into_owned(), z))
}

/// OLS of `y` and `x` on `z`.
pub fn reduced_form_fit(
    y_res: &DVector<f64>,
    x_res: &DVector<f64>,
    z_res: &DMatrix<f64>,
) -> Result<FittedReducedForm> {
    let t = z_res.nrows();
    if y_res.len() != t || x_res.len() != t {
        return Err(Error::Dimension("regression inputs have different lengths".into()));
    }
    if t <= z_res.ncols() {
        return Err(Error::Input("more instruments than observations".into()));
    }
    let dep = dependent_columns(z_res);
    if !dep.is_empty() {
        return Err(Error::Conditioning(format!(
            "Z'Z is singular; dependent instrument columns (0-based): {dep:?}"
        )));
    }
    let qr = z_res.clone().qr();
    let r = qr.r();
    let qt = qr.q().transpose();
    let solve = |v: &DVector<f64>| -> Result<DVector<f64>> {
        r.solve_upper_triangular(&(&qt * v))
            .ok_or_else(|| Error::Conditioning("Z'Z is singular".into()))
    };
    let xi1 = solve(y_res)?;
    let xi2 = solve(x_res)?;
    let residuals_u = y_res - z_res * &xi1;
    let residuals_v = x_res - z_res * &xi2;
    Ok(FittedReducedForm { xi1, xi2, residuals_u, residuals_v })
}

fn check_resid_dims(z: &DMatrix<f64>, u: &DVector<f64>, v: &DVector<f64>) -> Result<()> {
    if u.len() != z.nrows() || v.len() != z.nrows() {
        return Err(Error::Dimension("residuals and instruments have different lengths".into()));
    }
    Ok(())
}

/// `(I₂⊗(Z′Z)⁻¹)·meat·(I₂⊗(Z′Z)⁻¹)`, symmetrized.
fn sandwich(z: &DMatrix<f64>, meat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let zz = z.transpose() * z;
    let bread = linalg::kron_i2(&linalg::spd_inverse(&zz, "Z'Z")?);
    let v = &bread * meat * &bread;
    Ok((&v + v.transpose()) * 0.5)
}

#[inline]
fn add_outer(meat: &mut DMatrix<f64>, g: &[f64]) {
    let n = g.len();
    for a in 0..n {
        for b in 0..n {
            meat[(a, b)] += g[a] * g[b];
        }
    }
}

/// Heteroskedasticity-robust covariance of `(ξ̂₁′, ξ̂₂′)′`.
///
/// The result may be singular (e.g. with an identically zero residual);
/// positive definiteness is enforced where the matrix enters
/// [`ReducedFormStats`].
pub fn robust_vcov(z_res: &DMatrix<f64>, u: &DVector<f64>, v: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_resid_dims(z_res, u, v)?;
    let k = z_res.ncols();
    let mut meat = DMatrix::<f64>::zeros(2 * k, 2 * k);
    let mut g = vec![0.0; 2 * k];
    for t in 0..z_res.nrows() {
        for i in 0..k {
            g[i] = u[t] * z_res[(t, i)];
            g[k + i] = v[t] * z_res[(t, i)];
        }
        add_outer(&mut meat, &g);
    }
    sandwich(z_res, &meat)
}

/// Cluster-robust (CR0) covariance: scores summed within clusters.
pub fn clustered_vcov(
    z_res: &DMatrix<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
    cluster_ids: &[i64],
) -> Result<DMatrix<f64>> {
    check_resid_dims(z_res, u, v)?;
    if cluster_ids.len() != z_res.nrows() {
        return Err(Error::Dimension("one cluster id per observation is required".into()));
    }
    let k = z_res.ncols();
    let mut sums: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for (t, id) in cluster_ids.iter().enumerate() {
        let g = sums.entry(*id).or_insert_with(|| vec![0.0; 2 * k]);
        for i in 0..k {
            g[i] += u[t] * z_res[(t, i)];
            g[k + i] += v[t] * z_res[(t, i)];
        }
    }
    if sums.len() < k + 1 {
        return Err(Error::Input(format!(
            "{} clusters are too few for {k} instruments; at least {} are needed",
            sums.len(),
            k + 1
        )));
    }
    let mut meat = DMatrix::<f64>::zeros(2 * k, 2 * k);
    for g in sums.values() {
        add_outer(&mut meat, g);
    }
    sandwich(z_res, &meat)
}

/// Posterior mean of each first stage under a flat prior on the negative
/// half-line: `π̂ − σ̂·φ(π̂/σ̂)/(1 − Φ(π̂/σ̂))`. Every entry is negative.
pub fn sign_calibrate(pi_hat: &DVector<f64>, se: &DVector<f64>) -> Result<DVector<f64>> {
    if pi_hat.len() != se.len() {
        return Err(Error::Dimension("pi_hat and se must have equal length".into()));
    }
    if se.iter().any(|&s| !(s > 0.0 && s.is_finite())) || pi_hat.iter().any(|p| !p.is_finite()) {
        return Err(Error::Domain("standard errors must be positive and estimates finite".into()));
    }
    Ok(pi_hat.zip_map(se, |p, s| -s * normal::inverse_mills_excess(p / s)))
}
