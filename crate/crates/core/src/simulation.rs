//! Simulation studies: canonical single-instrument grids, quadrature bias,
//! absolute-deviation quantiles, dominance statistics, Anderson–Rubin
//! containment, and multi-instrument designs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::mc::{self, McRng, MeanAcc, StreamKey};
use crate::multi::{self, WeightSpec};
use crate::normal;
use crate::quadrature;
use crate::risk;
use crate::single::{self, beta_u_parts};
use crate::stats::{InstrumentBlock, ReducedFormStats};

/// Smallest first stage at which the quadrature bias of `β̂_U` is attempted.
pub const MIN_QUADRATURE_PI: f64 = 0.16;

/// Single-instrument estimators compared in the simulations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    BetaU,
    TwoSls,
    Fuller,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::BetaU, Estimator::TwoSls, Estimator::Fuller];

    pub fn label(self) -> &'static str {
        match self {
            Estimator::BetaU => "beta_u",
            Estimator::TwoSls => "2sls",
            Estimator::Fuller => "fuller",
        }
    }

    /// `None` only for 2SLS at an exactly zero first stage.
    #[inline]
    pub fn eval(self, b: &InstrumentBlock) -> Option<f64> {
        match self {
            Estimator::BetaU => Some(beta_u_parts(b.xi1, b.xi2, b.s12, b.s22)),
            Estimator::TwoSls => single::beta_2sls_single(b).ok(),
            Estimator::Fuller => Some(single::beta_fuller(b)),
        }
    }
}

/// A design point: `ξ ~ N((βπ′, π′)′, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub pi: DVector<f64>,
    pub beta: f64,
    pub sigma: DMatrix<f64>,
    pub n_draws: usize,
    pub seed: u64,
}

impl Scenario {
    /// Requires positive first stages; see [`Scenario::sign_violating`].
    pub fn new(pi: DVector<f64>, beta: f64, sigma: DMatrix<f64>, n_draws: usize, seed: u64) -> Result<Self> {
        if pi.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Domain("first-stage coefficients must be positive".into()));
        }
        Self::sign_violating(pi, beta, sigma, n_draws, seed)
    }

    /// As [`Scenario::new`] but allows first stages of either sign.
    pub fn sign_violating(pi: DVector<f64>, beta: f64, sigma: DMatrix<f64>, n_draws: usize, seed: u64) -> Result<Self> {
        let k = pi.len();
        if k == 0 || sigma.nrows() != 2 * k {
            return Err(Error::Dimension("scenario dimensions are inconsistent".into()));
        }
        if pi.iter().any(|v| !v.is_finite()) || !beta.is_finite() {
            return Err(Error::Domain("scenario parameters must be finite".into()));
        }
        let sigma = linalg::symmetrize(&sigma, "sigma")?;
        linalg::cholesky(&sigma, "sigma")?;
        Ok(Self { pi, beta, sigma, n_draws, seed })
    }

    /// Canonical single-instrument point: `β = 0`, unit variances.
    pub fn canonical(pi: f64, sigma12: f64, n_draws: usize, seed: u64) -> Result<Self> {
        if !(sigma12.abs() < 1.0) {
            return Err(Error::Domain(format!("sigma12 must lie in (-1, 1), got {sigma12}")));
        }
        Self::new(
            DVector::from_element(1, pi),
            0.0,
            DMatrix::from_row_slice(2, 2, &[1.0, sigma12, sigma12, 1.0]),
            n_draws,
            seed,
        )
    }

    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn key(&self) -> StreamKey {
        StreamKey::new(self.seed, 0)
    }

    /// Mean of the first-stage F statistic `ξ₂′Σ₂₂⁻¹ξ₂/k`, i.e. `1 + π′Σ₂₂⁻¹π/k`.
    pub fn expected_f(&self) -> Result<f64> {
        let k = self.k();
        let s22 = self.sigma.view((k, k), (k, k)).into_owned();
        let x = linalg::cholesky(&s22, "sigma22")?.solve(&self.pi);
        Ok(1.0 + self.pi.dot(&x) / k as f64)
    }

    fn single_block_sampler(&self) -> Result<SingleSampler> {
        if self.k() != 1 {
            return Err(Error::Unsupported(format!(
                "this study is single-instrument only, got k = {}",
                self.k()
            )));
        }
        let (s11, s12, s22) = (self.sigma[(0, 0)], self.sigma[(0, 1)], self.sigma[(1, 1)]);
        let r22 = s22.sqrt();
        Ok(SingleSampler {
            m1: self.beta * self.pi[0],
            m2: self.pi[0],
            l21: s12 / r22,
            l11: (s11 - s12 * s12 / s22).sqrt(),
            r22,
            s11,
            s12,
            s22,
        })
    }

    /// Sampler of full `ReducedFormStats` draws.
    pub fn sampler(&self) -> Result<StatsSampler> {
        let k = self.k();
        let mean = DVector::from_fn(2 * k, |r, _| {
            if r < k {
                self.beta * self.pi[r]
            } else {
                self.pi[r - k]
            }
        });
        Ok(StatsSampler {
            mean,
            chol: linalg::cholesky_with_jitter(&self.sigma, "sigma")?,
            sigma: self.sigma.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct SingleSampler {
    m1: f64,
    m2: f64,
    l11: f64,
    l21: f64,
    r22: f64,
    s11: f64,
    s12: f64,
    s22: f64,
}

impl SingleSampler {
    #[inline]
    fn draw(&self, rng: &mut McRng) -> InstrumentBlock {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        InstrumentBlock {
            xi1: self.m1 + self.l21 * z2 + self.l11 * z1,
            xi2: self.m2 + self.r22 * z2,
            s11: self.s11,
            s12: self.s12,
            s22: self.s22,
        }
    }
}

/// Draws `ξ` for a scenario of any dimension.
#[derive(Debug, Clone)]
pub struct StatsSampler {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    sigma: DMatrix<f64>,
}

impl StatsSampler {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> ReducedFormStats {
        let n = self.mean.len();
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let xi = &self.mean + &self.chol * z;
        let k = n / 2;
        ReducedFormStats::from_parts_unchecked(
            xi.rows(0, k).into_owned(),
            xi.rows(k, k).into_owned(),
            self.sigma.clone(),
        )
    }
}

/// The equivariance reduction of a single-instrument model to `β = 0`,
/// unit variances and `σ₁₂ ≥ 0`, realized by `A = [[a1, a2], [0, a3]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reduction {
    pub pi: f64,
    pub sigma12: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl Reduction {
    /// Maps an estimate in the original units to canonical units.
    pub fn forward_beta(&self, beta: f64) -> f64 {
        (self.a1 * beta + self.a2) / self.a3
    }

    /// The inverse map of [`Reduction::forward_beta`].
    pub fn inverse_beta(&self, canonical: f64) -> f64 {
        (self.a3 * canonical - self.a2) / self.a1
    }
}

pub fn reduce_single(beta: f64, pi: f64, sigma1_sq: f64, sigma12: f64, sigma2_sq: f64) -> Result<Reduction> {
    if ![beta, pi, sigma1_sq, sigma12, sigma2_sq].iter().all(|v| v.is_finite()) {
        return Err(Error::Domain("reduction inputs must be finite".into()));
    }
    if !(sigma1_sq > 0.0 && sigma2_sq > 0.0 && sigma12 * sigma12 < sigma1_sq * sigma2_sq) {
        return Err(Error::Domain("variances must be positive with |σ₁₂| < σ₁σ₂".into()));
    }
    let a3 = 1.0 / sigma2_sq.sqrt();
    let resid = sigma12 - beta * sigma2_sq;
    let v = sigma1_sq - 2.0 * beta * sigma12 + beta * beta * sigma2_sq;
    let a1 = if resid < 0.0 { -1.0 } else { 1.0 } / v.sqrt();
    let a2 = -a1 * beta;
    Ok(Reduction { pi: a3 * pi, sigma12: a1 * a3 * resid, a1, a2, a3 })
}

/// Quadrature estimate of `E[β̂] − β` at the canonical point `(π, σ₁₂)`.
///
/// The reduced form given the first stage is integrated with an
/// `nodes`-point Gauss–Hermite rule. The first stage is integrated with a
/// sinh-mapped trapezoid rule of `4·nodes` points, because `β̂_U` carries a
/// left tail that decays only like `exp(πξ₂)`.
pub fn bias_quadrature(estimator: Estimator, pi: f64, sigma12: f64, nodes: usize) -> Result<f64> {
    if nodes < 50 {
        return Err(Error::Domain(format!("at least 50 nodes are required, got {nodes}")));
    }
    if !(sigma12.abs() < 1.0) || !pi.is_finite() {
        return Err(Error::Domain("need finite π and |σ₁₂| < 1".into()));
    }
    match estimator {
        Estimator::BetaU if pi < MIN_QUADRATURE_PI => {
            return Err(Error::Domain(format!(
                "beta_u quadrature requires pi >= {MIN_QUADRATURE_PI}: its sampling distribution has tails too heavy to integrate reliably below that, got {pi}"
            )))
        }
        Estimator::TwoSls => {
            return Err(Error::Unsupported("2SLS has no mean in the just-identified model".into()))
        }
        _ => {}
    }
    let (gx, gw) = quadrature::gauss_hermite(nodes)?;
    let reach = if pi > 0.0 { (40.0 / pi).max(40.0) } else { 40.0 };
    let (xs, ws) = quadrature::sinh_trapezoid(pi, reach, 4 * nodes)?;
    let cond_sd = (1.0 - sigma12 * sigma12).sqrt();
    let mut total = 0.0;
    for (&x, &w) in xs.iter().zip(&ws) {
        let dens = normal::pdf(x - pi);
        let mut inner = 0.0;
        for (&t, &g) in gx.iter().zip(&gw) {
            let xi1 = sigma12 * (x - pi) + cond_sd * t;
            inner += g * match estimator {
                Estimator::BetaU => xi1 - sigma12 * x,
                _ => (x * xi1 + sigma12) / (x * x + 1.0),
            };
        }
        total += match estimator {
            Estimator::BetaU => w * (ln_mills_density(x, pi).exp() * inner + dens * sigma12),
            _ => w * dens * inner,
        };
    }
    Ok(total)
}

/// `ln(mills(x)·φ(x − π))` without overflow.
fn ln_mills_density(x: f64, pi: f64) -> f64 {
    if x < 0.0 {
        // mills(x)φ(x − π) = Φ(−x)·exp(πx − π²/2)
        (-normal::cdf(x)).ln_1p() + pi * x - 0.5 * pi * pi
    } else {
        normal::ln_mills(x) - 0.5 * (x - pi) * (x - pi) - normal::SQRT_2PI.ln()
    }
}

/// Nearest-rank quantile of sorted data.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Draws `β̂ − β` for a single-instrument scenario.
pub fn deviations(estimator: Estimator, scenario: &Scenario, key: StreamKey) -> Result<Vec<f64>> {
    let s = scenario.single_block_sampler()?;
    let beta = scenario.beta;
    let out = mc::sample(scenario.n_draws, key, |rng| {
        estimator.eval(&s.draw(rng)).map_or(f64::NAN, |v| v - beta)
    });
    if out.iter().any(|v| v.is_nan()) {
        return Err(Error::Degenerate("2SLS met an exactly zero first stage".into()));
    }
    Ok(out)
}

/// Nearest-rank quantiles of `|β̂ − β|`.
pub fn deviation_quantiles(estimator: Estimator, scenario: &Scenario, probs: &[f64], key: StreamKey) -> Result<Vec<f64>> {
    if probs.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Domain("probabilities must lie in (0, 1)".into()));
    }
    let abs = sorted(deviations(estimator, scenario, key)?.into_iter().map(f64::abs).collect());
    if abs.is_empty() {
        return Err(Error::Domain("no draws requested".into()));
    }
    Ok(probs.iter().map(|&p| nearest_rank(&abs, p)).collect())
}

/// Nearest-rank median of `β̂ − β`.
pub fn median_bias(estimator: Estimator, scenario: &Scenario, key: StreamKey) -> Result<f64> {
    let dev = sorted(deviations(estimator, scenario, key)?);
    if dev.is_empty() {
        return Err(Error::Domain("no draws requested".into()));
    }
    Ok(nearest_rank(&dev, 0.5))
}

/// One-sided statistic `max(0, sup_x F̂_a(x) − F̂_b(x))` for the hypothesis
/// that `a` first-order stochastically dominates `b`.
pub fn ks_dominance(dev_a: &[f64], dev_b: &[f64]) -> Result<f64> {
    if dev_a.is_empty() || dev_b.is_empty() {
        return Err(Error::Domain("dominance statistic needs non-empty samples".into()));
    }
    let a = sorted(dev_a.to_vec());
    let b = sorted(dev_b.to_vec());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut best = 0.0_f64;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => break,
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        best = best.max(i as f64 / na - j as f64 / nb);
    }
    Ok(best)
}

/// `|β̂ − median(β̂)|` for a sample of estimates.
pub fn centred_abs(estimates: &[f64]) -> Vec<f64> {
    let med = nearest_rank(&sorted(estimates.to_vec()), 0.5);
    estimates.iter().map(|v| (v - med).abs()).collect()
}

/// Dominance statistics for `|ε_2SLS| ⪰ |ε_U|` and `|ε_U| ⪰ |ε_FULL|`.
/// `β̂_U` uses a stream independent of the one shared by 2SLS and Fuller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominanceStats {
    pub tsls_over_u: f64,
    pub u_over_fuller: f64,
}

pub fn dominance_study(scenario: &Scenario, key: StreamKey) -> Result<DominanceStats> {
    let u = deviations(Estimator::BetaU, scenario, key.derive(1))?;
    let t = deviations(Estimator::TwoSls, scenario, key.derive(2))?;
    let f = deviations(Estimator::Fuller, scenario, key.derive(2))?;
    let (eu, et, ef) = (centred_abs(&u), centred_abs(&t), centred_abs(&f));
    Ok(DominanceStats {
        tsls_over_u: ks_dominance(&et, &eu)?,
        u_over_fuller: ks_dominance(&eu, &ef)?,
    })
}

/// Frequency with which the Anderson–Rubin set at `level` contains `β̂_U`.
pub fn ar_containment(scenario: &Scenario, level: f64, key: StreamKey) -> Result<f64> {
    let s = scenario.single_block_sampler()?;
    let q = normal::chi2_1_quantile(level)?;
    let hits = mc::map_chunks(scenario.n_draws, key, |rng, len| {
        (0..len)
            .filter(|_| {
                let b = s.draw(rng);
                single::ar_set_with_critical(&b, q, level).contains(beta_u_parts(b.xi1, b.xi2, b.s12, b.s22))
            })
            .count()
    });
    Ok(hits.iter().sum::<usize>() as f64 / scenario.n_draws.max(1) as f64)
}

/// Frequencies with which `β̂_U` and 2SLS get the sign of `β − σ₁₂/σ₂²` right.
pub fn sign_agreement(scenario: &Scenario, key: StreamKey) -> Result<(f64, f64)> {
    let s = scenario.single_block_sampler()?;
    let slope = s.s12 / s.s22;
    let target = (scenario.beta - slope).signum();
    let counts = mc::map_chunks(scenario.n_draws, key, |rng, len| {
        let mut c = (0usize, 0usize);
        for _ in 0..len {
            let b = s.draw(rng);
            if (beta_u_parts(b.xi1, b.xi2, b.s12, b.s22) - slope).signum() == target {
                c.0 += 1;
            }
            if b.xi2 != 0.0 && (b.xi1 / b.xi2 - slope).signum() == target {
                c.1 += 1;
            }
        }
        c
    });
    let n = scenario.n_draws.max(1) as f64;
    let (u, t) = counts.iter().fold((0, 0), |a, c| (a.0 + c.0, a.1 + c.1));
    Ok((u as f64 / n, t as f64 / n))
}

/// The canonical single-instrument grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec1 {
    pub sigma12_values: Vec<f64>,
    pub pi_values: Vec<f64>,
}

impl Default for GridSpec1 {
    fn default() -> Self {
        Self {
            sigma12_values: vec![0.0, 0.3, 0.5, 0.7, 0.95],
            pi_values: vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
        }
    }
}

impl GridSpec1 {
    pub fn validate(&self) -> Result<()> {
        if self.sigma12_values.iter().any(|&s| !(0.0..1.0).contains(&s)) {
            return Err(Error::Domain("sigma12 values must lie in [0, 1)".into()));
        }
        if self.pi_values.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::Domain("pi values must be positive".into()));
        }
        if self.sigma12_values.is_empty() || self.pi_values.is_empty() {
            return Err(Error::Domain("grid is empty".into()));
        }
        Ok(())
    }
}

/// One row of the single-instrument results table.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleRow {
    pub estimator: Estimator,
    pub pi: f64,
    pub sigma12: f64,
    pub expected_f: f64,
    pub draws: usize,
    pub quad_bias: Option<f64>,
    pub median_bias: f64,
    pub absdev_q10: f64,
    pub absdev_q50: f64,
    pub absdev_q90: f64,
    pub mad: f64,
    /// `|ε_2SLS| ⪰ |ε_U|` on the 2SLS row, `|ε_U| ⪰ |ε_FULL|` on the `β̂_U` row.
    pub ks_dominance: Option<f64>,
    pub ar_contain_95: Option<f64>,
}

pub const SINGLE_COLUMNS: [&str; 13] = [
    "estimator",
    "pi",
    "sigma12",
    "expected_f",
    "draws",
    "quad_bias",
    "median_bias",
    "absdev_q10",
    "absdev_q50",
    "absdev_q90",
    "mad",
    "ks_dominance",
    "ar_contain_95",
];

/// Runs every estimator at every grid point. Scenario `j` uses streams derived
/// from `(seed, j)`.
pub fn run_single_grid(grid: &GridSpec1, draws: usize, seed: u64, nodes: usize) -> Result<Vec<SingleRow>> {
    grid.validate()?;
    if draws == 0 {
        return Err(Error::Domain("at least one draw is required".into()));
    }
    let root = StreamKey::new(seed, 0x5349_4E47);
    let mut rows = Vec::new();
    let mut j = 0u64;
    for &s12 in &grid.sigma12_values {
        for &pi in &grid.pi_values {
            let sc = Scenario::canonical(pi, s12, draws, seed)?;
            let key = root.derive(j);
            j += 1;
            let dom = dominance_study(&sc, key)?;
            let ar = ar_containment(&sc, 0.95, key.derive(3))?;
            for est in Estimator::ALL {
                // Same streams as the dominance study.
                let dkey = if est == Estimator::BetaU { key.derive(1) } else { key.derive(2) };
                let dev = deviations(est, &sc, dkey)?;
                let mad = dev.iter().map(|v| v.abs()).collect::<MeanAcc>().mean;
                let med = nearest_rank(&sorted(dev.clone()), 0.5);
                let abs = sorted(dev.into_iter().map(f64::abs).collect());
                let quad_bias = match est {
                    Estimator::BetaU if pi < MIN_QUADRATURE_PI => None,
                    Estimator::TwoSls => None,
                    _ => Some(bias_quadrature(est, pi, s12, nodes)?),
                };
                rows.push(SingleRow {
                    estimator: est,
                    pi,
                    sigma12: s12,
                    expected_f: 1.0 + pi * pi,
                    draws,
                    quad_bias,
                    median_bias: med,
                    absdev_q10: nearest_rank(&abs, 0.1),
                    absdev_q50: nearest_rank(&abs, 0.5),
                    absdev_q90: nearest_rank(&abs, 0.9),
                    mad,
                    ks_dominance: match est {
                        Estimator::TwoSls => Some(dom.tsls_over_u),
                        Estimator::BetaU => Some(dom.u_over_fuller),
                        Estimator::Fuller => None,
                    },
                    ar_contain_95: (est == Estimator::BetaU).then_some(ar),
                });
            }
        }
    }
    Ok(rows)
}

/// A multi-instrument design: `Σ = [[1, σ_UV], [σ_UV, 1]] ⊗ (Z′Z)⁻¹`, first
/// stage `‖π‖·d/‖d‖`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiDesign {
    pub pi_direction: DVector<f64>,
    pub z_gram: DMatrix<f64>,
    pub pi_norm_values: Vec<f64>,
    pub sigma_uv_values: Vec<f64>,
}

impl MultiDesign {
    pub fn scenarios(&self, n_draws: usize, seed: u64) -> Result<Vec<Scenario>> {
        let mut out = Vec::new();
        for &s in &self.sigma_uv_values {
            for &p in &self.pi_norm_values {
                out.push(build_multi_design(&self.pi_direction, &self.z_gram, p, s, n_draws, seed)?);
            }
        }
        Ok(out)
    }
}

pub fn build_multi_design(
    pi_direction: &DVector<f64>,
    z_gram: &DMatrix<f64>,
    pi_norm: f64,
    sigma_uv: f64,
    n_draws: usize,
    seed: u64,
) -> Result<Scenario> {
    let k = pi_direction.len();
    if z_gram.nrows() != k || z_gram.ncols() != k {
        return Err(Error::Dimension(format!("z_gram must be {k}x{k}")));
    }
    if pi_direction.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Domain("direction entries must be positive".into()));
    }
    if !(sigma_uv.abs() < 1.0) || !(pi_norm > 0.0) {
        return Err(Error::Domain("need |sigma_uv| < 1 and a positive norm".into()));
    }
    let zg = linalg::symmetrize(z_gram, "z_gram")?;
    let qz = linalg::spd_inverse(&zg, "z_gram")?;
    let quv = DMatrix::from_row_slice(2, 2, &[1.0, sigma_uv, sigma_uv, 1.0]);
    let pi = pi_direction * (pi_norm / pi_direction.norm());
    Scenario::new(pi, 0.0, quv.kronecker(&qz), n_draws, seed)
}

/// `‖π‖` giving `E[F] = target` along `direction` when `Σ₂₂ = (Z′Z)⁻¹`.
pub fn pi_norm_for_expected_f(direction: &DVector<f64>, z_gram: &DMatrix<f64>, target: f64) -> Result<f64> {
    if !(target > 1.0) {
        return Err(Error::Domain("the mean F statistic must exceed one".into()));
    }
    let d = direction / direction.norm();
    let quad = (d.transpose() * z_gram * &d)[(0, 0)];
    Ok(((target - 1.0) * direction.len() as f64 / quad).sqrt())
}

/// Estimators evaluated on multi-instrument draws.
#[derive(Debug, Clone, PartialEq)]
pub enum MultiEstimator {
    /// 2SLS with weight matrix `Z′Z`.
    TwoSls,
    /// Fixed-weight combination of per-instrument `β̂_U`.
    BetaW(DVector<f64>),
    Rb(WeightSpec),
    RbC { c: f64, spec: WeightSpec },
    /// `β̂_U` applied to the known-direction submodel at the true `π`.
    Oracle,
}

impl MultiEstimator {
    pub fn label(&self) -> String {
        match self {
            Self::TwoSls => "2sls".into(),
            Self::BetaW(_) => "beta_w".into(),
            Self::Rb(s) => format!("rb_{}", s.label()),
            Self::RbC { c, spec } => format!("rb_c{c}_{}", spec.label()),
            Self::Oracle => "oracle".into(),
        }
    }
}

/// Per-estimator summaries over outer draws.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSummary {
    pub label: String,
    /// `β̂ − β`.
    pub error: MeanAcc,
    /// `|β̂ − β|`.
    pub abs_error: MeanAcc,
}

/// Outer Monte Carlo over `ξ` draws of `scenario`; Rao–Blackwellized
/// estimators average `s_draws` split draws each. Split draws are shared by
/// all Rao–Blackwellized estimators within an outer draw.
pub fn multi_study(
    scenario: &Scenario,
    estimators: &[MultiEstimator],
    z_gram: &DMatrix<f64>,
    s_draws: usize,
    key: StreamKey,
) -> Result<Vec<MultiSummary>> {
    let sampler = scenario.sampler()?;
    let beta = scenario.beta;
    let rb_specs: Vec<WeightSpec> = estimators
        .iter()
        .filter_map(|e| if let MultiEstimator::Rb(s) = e { Some(s.clone()) } else { None })
        .collect();
    let parts = mc::map_chunks(scenario.n_draws, key, |rng, len| -> Result<Vec<(MeanAcc, MeanAcc)>> {
        let mut acc = vec![(MeanAcc::default(), MeanAcc::default()); estimators.len()];
        for _ in 0..len {
            let stats = sampler.draw(rng);
            let inner = StreamKey::new(rng.random(), 0x5A45_5441);
            let rb = if rb_specs.is_empty() {
                Vec::new()
            } else {
                multi::beta_rb_shared(&stats, &rb_specs, z_gram, s_draws, inner)?
            };
            let mut rb_iter = rb.iter();
            for (e, slot) in estimators.iter().zip(acc.iter_mut()) {
                let v = match e {
                    MultiEstimator::TwoSls => multi::beta_2sls_multi(&stats, z_gram)?,
                    MultiEstimator::BetaW(w) => multi::beta_w(&stats, w)?,
                    MultiEstimator::Rb(_) => rb_iter.next().map(|r| r.value).unwrap_or(f64::NAN),
                    MultiEstimator::RbC { c, spec } => {
                        multi::beta_rb_c(&stats, z_gram, *c, spec, s_draws, inner)?.value
                    }
                    MultiEstimator::Oracle => risk::oracle_beta(&stats, &scenario.pi)?,
                };
                slot.0.push(v - beta);
                slot.1.push((v - beta).abs());
            }
        }
        Ok(acc)
    });
    let mut total = vec![(MeanAcc::default(), MeanAcc::default()); estimators.len()];
    for part in parts {
        for (t, p) in total.iter_mut().zip(part?) {
            t.0 = t.0.merge(&p.0);
            t.1 = t.1.merge(&p.1);
        }
    }
    Ok(estimators
        .iter()
        .zip(total)
        .map(|(e, (error, abs_error))| MultiSummary { label: e.label(), error, abs_error })
        .collect())
}
