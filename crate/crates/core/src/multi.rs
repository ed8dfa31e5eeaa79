//! Several instruments: split-sample draws, combination weights, the
//! Rao–Blackwellized unbiased estimator and the positive recombination
//! transform.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::mc::{self, MeanAcc, StreamKey};
use crate::single::beta_u_parts;
use crate::stats::ReducedFormStats;

/// Largest tolerated share of draws with undefined weights.
pub const MAX_DEGENERATE_SHARE: f64 = 1e-3;

/// How the combination weights `ŵ(ξ⁽ᵇ⁾)` are formed.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSpec {
    /// Constant weights summing to one.
    Fixed(DVector<f64>),
    /// `ŵᵢ = (Wξ₂)ᵢ ξ₂ᵢ / ξ₂′Wξ₂` for a positive definite `W`.
    Quadratic(DMatrix<f64>),
    /// Quadratic weights at the two-step GMM matrix, with the preliminary
    /// estimate taken from 2SLS on `ξ⁽ᵇ⁾` weighted by `Z′Z`.
    GmmTwoStep,
}

impl WeightSpec {
    pub fn fixed(w: DVector<f64>) -> Result<Self> {
        check_weight_sum(&w)?;
        Ok(Self::Fixed(w))
    }

    pub fn quadratic(w: DMatrix<f64>) -> Result<Self> {
        let w = linalg::symmetrize(&w, "weight matrix")?;
        linalg::cholesky(&w, "weight matrix")?;
        Ok(Self::Quadratic(w))
    }

    fn check_dims(&self, k: usize) -> Result<()> {
        let ok = match self {
            Self::Fixed(w) => w.len() == k,
            Self::Quadratic(w) => w.nrows() == k && w.ncols() == k,
            Self::GmmTwoStep => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!("weight spec does not match k = {k}")))
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Fixed(_) => "fixed",
            Self::Quadratic(_) => "quadratic",
            Self::GmmTwoStep => "gmm_two_step",
        }
    }
}

fn check_weight_sum(w: &DVector<f64>) -> Result<()> {
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-10 || w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("weights must sum to one, got {s}")));
    }
    Ok(())
}

/// `M = C(c)·Diag(Σ₂₂)^{-1/2}` with `C(c)` unit on the diagonal and `c` elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustTransform {
    pub c: f64,
    pub m: DMatrix<f64>,
    pub m_inverse: DMatrix<f64>,
}

impl RobustTransform {
    pub fn new(sigma22_diag: &[f64], c: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&c) {
            return Err(Error::Domain(format!("c must lie in [0, 1), got {c}")));
        }
        if sigma22_diag.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Domain("first-stage variances must be positive".into()));
        }
        let k = sigma22_diag.len();
        let m = DMatrix::from_fn(k, k, |i, j| {
            let cij = if i == j { 1.0 } else { c };
            cij / sigma22_diag[j].sqrt()
        });
        let m_inverse = m
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Conditioning("recombination matrix is singular".into()))?;
        Ok(Self { c, m, m_inverse })
    }
}

/// `ξ⁽ᵃ⁾ = ξ + ζ` and `ξ⁽ᵇ⁾ = ξ − ζ`, both stacked as `(ξ₁′, ξ₂′)′`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPair {
    pub xi_a: DVector<f64>,
    pub xi_b: DVector<f64>,
}

/// Monte Carlo average over `S` split draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbEstimate {
    pub value: f64,
    pub mc_std_error: f64,
    /// Draws that entered the average.
    pub draws: u64,
    /// Draws skipped because the weights or the estimate were undefined.
    pub degenerate: u64,
}

/// `ξ₂′Wξ₁ / ξ₂′Wξ₂`.
pub fn beta_2sls_multi(stats: &ReducedFormStats, w_matrix: &DMatrix<f64>) -> Result<f64> {
    let k = stats.k();
    if w_matrix.nrows() != k || w_matrix.ncols() != k {
        return Err(Error::Dimension(format!("weight matrix must be {k}x{k}")));
    }
    let wx2 = w_matrix * stats.xi2();
    let den = wx2.dot(stats.xi2());
    if den == 0.0 || !den.is_finite() {
        return Err(Error::Degenerate("2SLS denominator ξ₂′Wξ₂ is zero".into()));
    }
    Ok(wx2.dot(stats.xi1()) / den)
}

/// `(Σ₁₁ − β̂(Σ₁₂ + Σ₂₁) + β̂²Σ₂₂)⁻¹`.
pub fn gmm_two_step_weight(stats: &ReducedFormStats, preliminary_beta: f64) -> Result<DMatrix<f64>> {
    let b = preliminary_beta;
    let inner = stats.sigma11() - (stats.sigma12() + stats.sigma21()) * b + stats.sigma22() * (b * b);
    linalg::spd_inverse(&inner, "GMM moment covariance").map_err(|_| {
        Error::Conditioning(format!(
            "GMM moment covariance is not positive definite at preliminary estimate {b}"
        ))
    })
}

/// Draws `ζ ~ N(0, Σ)` and returns the split pair.
pub fn split_draw<R: Rng + ?Sized>(stats: &ReducedFormStats, rng: &mut R) -> Result<SplitPair> {
    let l = linalg::cholesky_with_jitter(stats.sigma(), "sigma")?;
    let n = l.nrows();
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let zeta = l * z;
    let xi = stats.stacked();
    Ok(SplitPair { xi_a: &xi + &zeta, xi_b: &xi - &zeta })
}

/// Combination weights evaluated at the `b` half of a split draw.
///
/// `xi_b` is stacked `(ξ₁⁽ᵇ⁾′, ξ₂⁽ᵇ⁾′)′`; only the two-step GMM scheme reads
/// `ξ₁⁽ᵇ⁾` and `sigma`.
pub fn rb_weights(
    xi_b: &DVector<f64>,
    sigma: &DMatrix<f64>,
    spec: &WeightSpec,
    z_gram: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let k = xi_b.len() / 2;
    if xi_b.len() != 2 * k || sigma.nrows() != 2 * k || z_gram.nrows() != k {
        return Err(Error::Dimension("rb_weights: inconsistent dimensions".into()));
    }
    spec.check_dims(k)?;
    let prepared = Prepared::new(spec, sigma, z_gram);
    let mut out = vec![0.0; k];
    let mut scratch = Scratch::new(k);
    if prepared.weights(&xi_b.as_slice()[..k], &xi_b.as_slice()[k..], &mut out, &mut scratch) {
        Ok(DVector::from_vec(out))
    } else {
        Err(Error::Degenerate("combination weights undefined at this draw".into()))
    }
}

/// `Σᵢ wᵢ β̂_U(ξ(i), Σ(i))` for fixed weights.
pub fn beta_w(stats: &ReducedFormStats, w: &DVector<f64>) -> Result<f64> {
    if w.len() != stats.k() {
        return Err(Error::Dimension(format!("expected {} weights", stats.k())));
    }
    check_weight_sum(w)?;
    let mut total = 0.0;
    for (i, wi) in w.iter().enumerate() {
        let b = stats.block(i)?;
        total += wi * beta_u_parts(b.xi1, b.xi2, b.s12, b.s22);
    }
    Ok(total)
}

/// The Rao–Blackwellized estimator, averaged over `s_draws` split draws.
pub fn beta_rb(
    stats: &ReducedFormStats,
    spec: &WeightSpec,
    z_gram: &DMatrix<f64>,
    s_draws: usize,
    key: StreamKey,
) -> Result<RbEstimate> {
    let mut v = beta_rb_shared(stats, std::slice::from_ref(spec), z_gram, s_draws, key)?;
    Ok(v.remove(0))
}

/// Several weight schemes evaluated on the same split draws.
pub fn beta_rb_shared(
    stats: &ReducedFormStats,
    specs: &[WeightSpec],
    z_gram: &DMatrix<f64>,
    s_draws: usize,
    key: StreamKey,
) -> Result<Vec<RbEstimate>> {
    if s_draws == 0 {
        return Err(Error::Domain("at least one simulation draw is required".into()));
    }
    let k = stats.k();
    if z_gram.nrows() != k || z_gram.ncols() != k {
        return Err(Error::Dimension(format!("z_gram must be {k}x{k}")));
    }
    for s in specs {
        s.check_dims(k)?;
    }
    let kernel = Kernel::new(stats, specs, z_gram)?;
    let parts = mc::map_chunks(s_draws, key, |rng, len| kernel.run_chunk(rng, len));
    let mut accs = vec![(MeanAcc::default(), 0u64); specs.len()];
    for chunk in parts {
        for (acc, part) in accs.iter_mut().zip(chunk) {
            acc.0 = acc.0.merge(&part.0);
            acc.1 += part.1;
        }
    }
    accs.into_iter()
        .map(|(acc, degenerate)| {
            if degenerate as f64 > MAX_DEGENERATE_SHARE * s_draws as f64 || acc.n == 0 {
                return Err(Error::Degenerate(format!(
                    "{degenerate} of {s_draws} split draws had undefined weights"
                )));
            }
            Ok(RbEstimate {
                value: acc.mean,
                mc_std_error: acc.std_error(),
                draws: acc.n,
                degenerate,
            })
        })
        .collect()
}

/// Applies `M(c)`: returns `((I₂⊗M)ξ, (I₂⊗M)Σ(I₂⊗M)′)`, `M⁻¹′WM⁻¹` and the transform.
pub fn robust_transform(
    stats: &ReducedFormStats,
    z_gram: &DMatrix<f64>,
    c: f64,
) -> Result<(ReducedFormStats, DMatrix<f64>, RobustTransform)> {
    let k = stats.k();
    if z_gram.nrows() != k || z_gram.ncols() != k {
        return Err(Error::Dimension(format!("z_gram must be {k}x{k}")));
    }
    let diag: Vec<f64> = stats.sigma22().diagonal().iter().copied().collect();
    let t = RobustTransform::new(&diag, c)?;
    let big = linalg::kron_i2(&t.m);
    let xi = &big * stats.stacked();
    let sigma = &big * stats.sigma() * big.transpose();
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    let w = transform_weight(z_gram, &t);
    Ok((ReducedFormStats::from_stacked(&xi, sigma)?, w, t))
}

fn transform_weight(w: &DMatrix<f64>, t: &RobustTransform) -> DMatrix<f64> {
    let out = t.m_inverse.transpose() * w * &t.m_inverse;
    (&out + out.transpose()) * 0.5
}

/// `β̂_RB` on the recombined instruments `Mξ₂`.
pub fn beta_rb_c(
    stats: &ReducedFormStats,
    z_gram: &DMatrix<f64>,
    c: f64,
    spec: &WeightSpec,
    s_draws: usize,
    key: StreamKey,
) -> Result<RbEstimate> {
    let (tstats, tz, t) = robust_transform(stats, z_gram, c)?;
    let tspec = match spec {
        WeightSpec::Quadratic(w) => WeightSpec::Quadratic(transform_weight(w, &t)),
        other => other.clone(),
    };
    beta_rb(&tstats, &tspec, &tz, s_draws, key)
}

/// A weight scheme with its matrices flattened for the inner loop.
enum Prepared {
    Fixed(Vec<f64>),
    Quadratic(Vec<f64>),
    Gmm {
        z_gram: Vec<f64>,
        s11: Vec<f64>,
        s12_sym: Vec<f64>,
        s22: Vec<f64>,
    },
}

struct Scratch {
    y: Vec<f64>,
    m: Vec<f64>,
}

impl Scratch {
    fn new(k: usize) -> Self {
        Self { y: vec![0.0; k], m: vec![0.0; k * k] }
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    (0..r * c).map(|i| m[(i / c, i % c)]).collect()
}

#[inline]
fn mat_vec(m: &[f64], x: &[f64], out: &mut [f64]) {
    let k = x.len();
    for i in 0..k {
        let row = &m[i * k..(i + 1) * k];
        out[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// Solves `A y = b` for symmetric positive definite `A` (row-major, overwritten).
fn chol_solve(a: &mut [f64], b: &[f64], y: &mut [f64]) -> bool {
    let k = b.len();
    for j in 0..k {
        let mut d = a[j * k + j];
        for p in 0..j {
            d -= a[j * k + p] * a[j * k + p];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        a[j * k + j] = d;
        for i in j + 1..k {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= a[i * k + p] * a[j * k + p];
            }
            a[i * k + j] = s / d;
        }
    }
    for i in 0..k {
        let mut s = b[i];
        for p in 0..i {
            s -= a[i * k + p] * y[p];
        }
        y[i] = s / a[i * k + i];
    }
    for i in (0..k).rev() {
        let mut s = y[i];
        for p in i + 1..k {
            s -= a[p * k + i] * y[p];
        }
        y[i] = s / a[i * k + i];
    }
    true
}

#[inline]
fn quadratic_weights(wx2: &[f64], x2: &[f64], out: &mut [f64]) -> bool {
    let den: f64 = wx2.iter().zip(x2).map(|(a, b)| a * b).sum();
    if den == 0.0 || !den.is_finite() {
        return false;
    }
    for i in 0..x2.len() {
        out[i] = wx2[i] * x2[i] / den;
    }
    true
}

impl Prepared {
    fn new(spec: &WeightSpec, sigma: &DMatrix<f64>, z_gram: &DMatrix<f64>) -> Self {
        let k = z_gram.nrows();
        match spec {
            WeightSpec::Fixed(w) => Self::Fixed(w.iter().copied().collect()),
            WeightSpec::Quadratic(w) => Self::Quadratic(row_major(w)),
            WeightSpec::GmmTwoStep => {
                let s11 = sigma.view((0, 0), (k, k)).into_owned();
                let s12 = sigma.view((0, k), (k, k)).into_owned();
                let s21 = sigma.view((k, 0), (k, k)).into_owned();
                let s22 = sigma.view((k, k), (k, k)).into_owned();
                Self::Gmm {
                    z_gram: row_major(z_gram),
                    s11: row_major(&s11),
                    s12_sym: row_major(&(s12 + s21)),
                    s22: row_major(&s22),
                }
            }
        }
    }

    fn weights(&self, x1: &[f64], x2: &[f64], out: &mut [f64], sc: &mut Scratch) -> bool {
        match self {
            Self::Fixed(w) => {
                out.copy_from_slice(w);
                true
            }
            Self::Quadratic(w) => {
                mat_vec(w, x2, &mut sc.y);
                quadratic_weights(&sc.y, x2, out)
            }
            Self::Gmm { z_gram, s11, s12_sym, s22 } => {
                mat_vec(z_gram, x2, &mut sc.y);
                let den: f64 = sc.y.iter().zip(x2).map(|(a, b)| a * b).sum();
                if den == 0.0 || !den.is_finite() {
                    return false;
                }
                let b: f64 = sc.y.iter().zip(x1).map(|(a, c)| a * c).sum::<f64>() / den;
                for i in 0..sc.m.len() {
                    sc.m[i] = s11[i] - b * s12_sym[i] + b * b * s22[i];
                }
                let mut y = std::mem::take(&mut sc.y);
                let ok = chol_solve(&mut sc.m, x2, &mut y) && quadratic_weights(&y, x2, out);
                sc.y = y;
                ok
            }
        }
    }
}

struct Kernel {
    k: usize,
    xi: Vec<f64>,
    chol: Vec<f64>,
    /// Per-instrument `(2σ₁₂, 2σ₂²)` of `2Σ(i)`.
    split_cov: Vec<(f64, f64)>,
    specs: Vec<Prepared>,
}

impl Kernel {
    fn new(stats: &ReducedFormStats, specs: &[WeightSpec], z_gram: &DMatrix<f64>) -> Result<Self> {
        let k = stats.k();
        let l = linalg::cholesky_with_jitter(stats.sigma(), "sigma")?;
        let sigma = stats.sigma();
        Ok(Self {
            k,
            xi: stats.stacked().iter().copied().collect(),
            chol: row_major(&l),
            split_cov: (0..k)
                .map(|i| (2.0 * sigma[(i, k + i)], 2.0 * sigma[(k + i, k + i)]))
                .collect(),
            specs: specs.iter().map(|s| Prepared::new(s, sigma, z_gram)).collect(),
        })
    }

    fn run_chunk(&self, rng: &mut mc::McRng, len: usize) -> Vec<(MeanAcc, u64)> {
        let n = 2 * self.k;
        let k = self.k;
        let mut z = vec![0.0; n];
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        let mut w = vec![0.0; k];
        let mut bu = vec![0.0; k];
        let mut sc = Scratch::new(k);
        let mut out = vec![(MeanAcc::default(), 0u64); self.specs.len()];
        for _ in 0..len {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            for i in 0..n {
                let row = &self.chol[i * n..i * n + i + 1];
                let zeta: f64 = row.iter().zip(&z).map(|(l, v)| l * v).sum();
                a[i] = self.xi[i] + zeta;
                b[i] = self.xi[i] - zeta;
            }
            for i in 0..k {
                let (s12, s22) = self.split_cov[i];
                bu[i] = beta_u_parts(a[i], a[k + i], s12, s22);
            }
            for (spec, slot) in self.specs.iter().zip(out.iter_mut()) {
                if !spec.weights(&b[..k], &b[k..], &mut w, &mut sc) {
                    slot.1 += 1;
                    continue;
                }
                let v: f64 = w.iter().zip(&bu).map(|(x, y)| x * y).sum();
                if v.is_finite() {
                    slot.0.push(v);
                } else {
                    slot.1 += 1;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::chunk_rng;
    use crate::normal::mills;
    use crate::single::beta_u;
    use proptest::prelude::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn stats(xi1: &[f64], xi2: &[f64], sigma: DMatrix<f64>) -> ReducedFormStats {
        ReducedFormStats::new(dv(xi1), dv(xi2), sigma).unwrap()
    }

    #[test]
    fn two_sls_multi_examples() {
        let s = stats(&[2.0, 4.0], &[1.0, 2.0], DMatrix::identity(4, 4));
        assert_eq!(beta_2sls_multi(&s, &DMatrix::identity(2, 2)).unwrap(), 2.0);
        for beta in [0.0, -1.7] {
            let s = stats(&[beta * 0.3, beta * 1.1], &[0.3, 1.1], DMatrix::identity(4, 4));
            let v = beta_2sls_multi(&s, &DMatrix::identity(2, 2)).unwrap();
            assert!((v - beta).abs() < 1e-15);
        }
        let z = stats(&[1.0, 1.0], &[0.0, 0.0], DMatrix::identity(4, 4));
        assert!(matches!(
            beta_2sls_multi(&z, &DMatrix::identity(2, 2)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn two_sls_is_weighted_ratio() {
        let s = stats(&[1.0, -2.0, 0.5], &[0.7, 1.3, -0.4], DMatrix::identity(6, 6));
        let w = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 1.5]);
        let direct = beta_2sls_multi(&s, &w).unwrap();
        let wts = rb_weights(&s.stacked(), s.sigma(), &WeightSpec::Quadratic(w), &DMatrix::identity(3, 3)).unwrap();
        let ratio: f64 = (0..3).map(|i| wts[i] * s.xi1()[i] / s.xi2()[i]).sum();
        assert!((direct - ratio).abs() < 1e-12);
    }

    #[test]
    fn gmm_weight_examples() {
        let s = stats(&[0.0, 0.0], &[1.0, 1.0], DMatrix::identity(4, 4));
        let w = gmm_two_step_weight(&s, 1.0).unwrap();
        assert!((w - DMatrix::<f64>::identity(2, 2) * 0.5).abs().max() < 1e-15);
        let mut sigma = DMatrix::<f64>::identity(4, 4);
        sigma[(0, 0)] = 4.0;
        sigma[(0, 1)] = 0.5;
        sigma[(1, 0)] = 0.5;
        let s = stats(&[0.0, 0.0], &[1.0, 1.0], sigma);
        let w0 = gmm_two_step_weight(&s, 0.0).unwrap();
        let expect = s.sigma11().try_inverse().unwrap();
        assert!((w0 - expect).abs().max() < 1e-14);
        let s1 = ReducedFormStats::single(0.0, 1.0, 2.0, 0.5, 1.0).unwrap();
        assert!((gmm_two_step_weight(&s1, 1.0).unwrap()[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rb_weight_examples() {
        let x = dv(&[0.0, 0.0, 1.0, 2.0]);
        let sig = DMatrix::identity(4, 4);
        let zg = DMatrix::identity(2, 2);
        let spec = WeightSpec::Quadratic(DMatrix::identity(2, 2));
        let w = rb_weights(&x, &sig, &spec, &zg).unwrap();
        assert!((w[0] - 0.2).abs() < 1e-15 && (w[1] - 0.8).abs() < 1e-15);
        let w7 = rb_weights(&(&x * 7.0), &sig, &spec, &zg).unwrap();
        assert!((w7 - w).abs().max() < 1e-15);
        let zero = dv(&[1.0, 1.0, 0.0, 0.0]);
        assert!(matches!(rb_weights(&zero, &sig, &spec, &zg), Err(Error::Degenerate(_))));
    }

    #[test]
    fn beta_w_examples() {
        let s = stats(&[3.0, 0.0], &[2.0, 1.0], DMatrix::identity(4, 4));
        let v = beta_w(&s, &dv(&[0.25, 0.75])).unwrap();
        assert!((v - 0.25 * mills(2.0) * 3.0).abs() < 1e-15);
        assert!((v - 0.316_026_9).abs() < 1e-7);
        let e2 = beta_w(&s, &dv(&[0.0, 1.0])).unwrap();
        assert_eq!(e2, beta_u(&s.block(1).unwrap()));
        let twin = stats(&[1.5, 1.5], &[0.8, 0.8], DMatrix::identity(4, 4));
        let half = beta_w(&twin, &dv(&[0.5, 0.5])).unwrap();
        assert!((half - beta_u(&twin.block(0).unwrap())).abs() < 1e-15);
        assert!(beta_w(&s, &dv(&[0.5, 0.6])).is_err());
    }

    #[test]
    fn split_pair_reconstructs() {
        let s = stats(&[1.0, 2.0], &[0.5, -0.3], DMatrix::identity(4, 4) * 2.0);
        let mut rng = chunk_rng(3, 0, 0);
        let two_xi = s.stacked() * 2.0;
        for _ in 0..100 {
            let p = split_draw(&s, &mut rng).unwrap();
            assert!((&p.xi_a + &p.xi_b - &two_xi).abs().max() <= 1e-15 * 8.0);
        }
    }

    #[test]
    fn transform_example_and_identity() {
        let mut sigma = DMatrix::<f64>::identity(4, 4);
        sigma[(2, 2)] = 4.0;
        let s = stats(&[1.0, 2.0], &[3.0, 4.0], sigma);
        let (_, _, t) = robust_transform(&s, &DMatrix::identity(2, 2), 0.5).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.25, 1.0]);
        assert!((t.m - expect).abs().max() < 1e-15);

        let s = stats(&[1.0, 2.0], &[3.0, 4.0], DMatrix::identity(4, 4));
        let zg = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let (ts, tw, t) = robust_transform(&s, &zg, 0.0).unwrap();
        assert_eq!(t.m, DMatrix::identity(2, 2));
        assert_eq!(ts, s);
        assert_eq!(tw, zg);
        assert!(matches!(robust_transform(&s, &zg, 1.0), Err(Error::Domain(_))));
        assert!(robust_transform(&s, &zg, -0.1).is_err());
    }

    #[test]
    fn transform_roundtrip() {
        let mut sigma = DMatrix::<f64>::identity(6, 6) * 1.5;
        sigma[(0, 3)] = 0.4;
        sigma[(3, 0)] = 0.4;
        sigma[(4, 4)] = 0.3;
        let s = stats(&[1.0, -2.0, 0.3], &[0.5, 0.8, 2.0], sigma);
        let zg = DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.0, 0.3, 0.0, 0.3, 1.5]);
        let (ts, tw, t) = robust_transform(&s, &zg, 0.7).unwrap();
        assert!(t.m.iter().all(|&v| v > 0.0));
        let back = linalg::kron_i2(&t.m_inverse);
        let xi = &back * ts.stacked();
        let sig = &back * ts.sigma() * back.transpose();
        let w = t.m.transpose() * &tw * &t.m;
        assert!((xi - s.stacked()).abs().max() < 1e-10);
        assert!((sig - s.sigma()).abs().max() < 1e-10);
        assert!((w - zg).abs().max() < 1e-10);
    }

    #[test]
    fn rb_with_identity_transform_matches_plain() {
        let s = stats(&[0.5, 1.0], &[2.0, 3.0], DMatrix::identity(4, 4));
        let zg = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0]);
        let spec = WeightSpec::Quadratic(zg.clone());
        let key = StreamKey::new(11, 1);
        let a = beta_rb(&s, &spec, &zg, 5000, key).unwrap();
        let b = beta_rb_c(&s, &zg, 0.0, &spec, 5000, key).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rb_deterministic_across_threads() {
        let s = stats(&[0.5, 1.0, 0.2], &[2.0, 3.0, 1.0], DMatrix::identity(6, 6));
        let zg = DMatrix::identity(3, 3);
        let key = StreamKey::new(9, 4);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| beta_rb(&s, &WeightSpec::GmmTwoStep, &zg, 20_000, key).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn rb_rejects_excess_degenerate_draws() {
        // Fixed weights never degenerate; a zero first stage with tiny noise
        // still leaves quadratic weights defined, so force it through shape.
        let s = stats(&[0.5], &[2.0], DMatrix::identity(2, 2));
        assert!(beta_rb(&s, &WeightSpec::Fixed(dv(&[1.0])), &DMatrix::identity(1, 1), 0, StreamKey::new(1, 1)).is_err());
        assert!(matches!(
            beta_rb(&s, &WeightSpec::Fixed(dv(&[0.5, 0.5])), &DMatrix::identity(1, 1), 10, StreamKey::new(1, 1)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn chol_solve_matches_nalgebra() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let b = [1.0, -2.0, 0.5];
        let mut flat = row_major(&a);
        let mut y = [0.0; 3];
        assert!(chol_solve(&mut flat, &b, &mut y));
        let expect = a.cholesky().unwrap().solve(&dv(&b));
        for i in 0..3 {
            assert!((y[i] - expect[i]).abs() < 1e-14);
        }
        let mut bad = vec![1.0, 2.0, 2.0, 1.0];
        assert!(!chol_solve(&mut bad, &[1.0, 1.0], &mut [0.0; 2]));
    }

    proptest! {
        #[test]
        fn weights_sum_to_one_and_scale_free(
            x in proptest::collection::vec(-5.0..5.0f64, 6),
            scale in 0.01..100.0f64,
            off in -0.4..0.4f64,
        ) {
            let xb = dv(&x);
            let sig = DMatrix::identity(6, 6);
            let zg = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { off });
            prop_assume!(xb.rows(3, 3).norm() > 1e-3);
            for spec in [WeightSpec::Quadratic(zg.clone()), WeightSpec::GmmTwoStep] {
                let w = rb_weights(&xb, &sig, &spec, &zg).unwrap();
                prop_assert!((w.sum() - 1.0).abs() < 1e-12);
                let ws = rb_weights(&(&xb * scale), &sig, &spec, &zg).unwrap();
                prop_assert!((ws - w).abs().max() < 1e-10);
            }
        }
    }
}
