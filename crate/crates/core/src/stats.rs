//! The reduced-form sufficient statistic and its per-instrument blocks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Stacked reduced-form and first-stage coefficients `ξ = (ξ₁′, ξ₂′)′` with
/// covariance `Σ` (2k×2k, ordered as ξ₁ block then ξ₂ block).
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedFormStats {
    xi1: DVector<f64>,
    xi2: DVector<f64>,
    sigma: DMatrix<f64>,
}

impl ReducedFormStats {
    /// Validates dimensions, finiteness, symmetry and positive definiteness.
    pub fn new(xi1: DVector<f64>, xi2: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let k = xi1.len();
        if k == 0 {
            return Err(Error::Dimension("at least one instrument is required".into()));
        }
        if xi2.len() != k {
            return Err(Error::Dimension(format!(
                "xi1 has length {k} but xi2 has length {}",
                xi2.len()
            )));
        }
        if sigma.nrows() != 2 * k || sigma.ncols() != 2 * k {
            return Err(Error::Dimension(format!(
                "sigma must be {0}x{0}, got {1}x{2}",
                2 * k,
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if xi1.iter().chain(xi2.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("xi has non-finite entries".into()));
        }
        let sigma = linalg::symmetrize(&sigma, "sigma")?;
        linalg::cholesky(&sigma, "sigma")?;
        Ok(Self { xi1, xi2, sigma })
    }

    /// Skips validation; `sigma` must already be known to be positive definite.
    pub(crate) fn from_parts_unchecked(
        xi1: DVector<f64>,
        xi2: DVector<f64>,
        sigma: DMatrix<f64>,
    ) -> Self {
        Self { xi1, xi2, sigma }
    }

    /// Builds from the stacked 2k-vector.
    pub fn from_stacked(xi: &DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        if xi.len() % 2 != 0 {
            return Err(Error::Dimension(format!(
                "stacked xi must have even length, got {}",
                xi.len()
            )));
        }
        let k = xi.len() / 2;
        Self::new(xi.rows(0, k).into_owned(), xi.rows(k, k).into_owned(), sigma)
    }

    /// Single-instrument convenience constructor.
    pub fn single(xi1: f64, xi2: f64, s11: f64, s12: f64, s22: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(1, xi1),
            DVector::from_element(1, xi2),
            DMatrix::from_row_slice(2, 2, &[s11, s12, s12, s22]),
        )
    }

    pub fn k(&self) -> usize {
        self.xi1.len()
    }

    pub fn xi1(&self) -> &DVector<f64> {
        &self.xi1
    }

    pub fn xi2(&self) -> &DVector<f64> {
        &self.xi2
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn stacked(&self) -> DVector<f64> {
        let k = self.k();
        DVector::from_fn(2 * k, |r, _| if r < k { self.xi1[r] } else { self.xi2[r - k] })
    }

    pub fn sigma11(&self) -> DMatrix<f64> {
        let k = self.k();
        self.sigma.view((0, 0), (k, k)).into_owned()
    }

    pub fn sigma12(&self) -> DMatrix<f64> {
        let k = self.k();
        self.sigma.view((0, k), (k, k)).into_owned()
    }

    pub fn sigma21(&self) -> DMatrix<f64> {
        let k = self.k();
        self.sigma.view((k, 0), (k, k)).into_owned()
    }

    pub fn sigma22(&self) -> DMatrix<f64> {
        let k = self.k();
        self.sigma.view((k, k), (k, k)).into_owned()
    }

    /// The 2-vector `ξ(i)` and 2×2 matrix `Σ(i)` for instrument `i`.
    pub fn block(&self, i: usize) -> Result<InstrumentBlock> {
        let k = self.k();
        if i >= k {
            return Err(Error::Dimension(format!("instrument {i} out of range for k = {k}")));
        }
        InstrumentBlock::new(
            self.xi1[i],
            self.xi2[i],
            self.sigma[(i, i)],
            self.sigma[(i, k + i)],
            self.sigma[(k + i, k + i)],
        )
    }

    /// `(√a·ξ, a·Σ)` for `a > 0`.
    pub fn scaled(&self, a: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::Domain(format!("scale must be positive, got {a}")));
        }
        let r = a.sqrt();
        Self::new(&self.xi1 * r, &self.xi2 * r, &self.sigma * a)
    }
}

/// One instrument's `ξ(i) = (ξ₁ᵢ, ξ₂ᵢ)` and `Σ(i) = [[σ₁², σ₁₂], [σ₁₂, σ₂²]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstrumentBlock {
    pub xi1: f64,
    pub xi2: f64,
    pub s11: f64,
    pub s12: f64,
    pub s22: f64,
}

impl InstrumentBlock {
    pub fn new(xi1: f64, xi2: f64, s11: f64, s12: f64, s22: f64) -> Result<Self> {
        if ![xi1, xi2, s11, s12, s22].iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("instrument block has non-finite entries".into()));
        }
        if !(s11 > 0.0 && s22 > 0.0 && s11 * s22 - s12 * s12 > 0.0) {
            return Err(Error::Conditioning(format!(
                "instrument block covariance [[{s11}, {s12}], [{s12}, {s22}]] is not positive definite"
            )));
        }
        Ok(Self { xi1, xi2, s11, s12, s22 })
    }

    /// `Σ(i)` with an identity covariance.
    pub fn standard(xi1: f64, xi2: f64) -> Self {
        Self { xi1, xi2, s11: 1.0, s12: 0.0, s22: 1.0 }
    }

    /// Applies `ξ ↦ Aξ`, `Σ ↦ AΣA′` for `A = [[a1, a2], [0, a3]]`.
    pub fn transform(&self, a1: f64, a2: f64, a3: f64) -> Result<Self> {
        Self::new(
            a1 * self.xi1 + a2 * self.xi2,
            a3 * self.xi2,
            a1 * a1 * self.s11 + 2.0 * a1 * a2 * self.s12 + a2 * a2 * self.s22,
            a3 * (a1 * self.s12 + a2 * self.s22),
            a3 * a3 * self.s22,
        )
    }
}

impl TryFrom<&ReducedFormStats> for InstrumentBlock {
    type Error = Error;

    fn try_from(stats: &ReducedFormStats) -> Result<Self> {
        if stats.k() != 1 {
            return Err(Error::Dimension(format!(
                "expected a single instrument, got k = {}",
                stats.k()
            )));
        }
        stats.block(0)
    }
}

impl From<InstrumentBlock> for ReducedFormStats {
    fn from(b: InstrumentBlock) -> Self {
        Self {
            xi1: DVector::from_element(1, b.xi1),
            xi2: DVector::from_element(1, b.xi2),
            sigma: DMatrix::from_row_slice(2, 2, &[b.s11, b.s12, b.s12, b.s22]),
        }
    }
}
