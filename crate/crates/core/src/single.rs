//! Just-identified estimators and the Anderson–Rubin confidence set.

use std::fmt;

use crate::error::{Error, Result};
use crate::normal;
use crate::stats::InstrumentBlock;

/// Unbiased estimator of `1/π` from a first-stage coefficient with known
/// positive sign: `(1/σ₂)·mills(ξ₂/σ₂)`.
pub fn tau_hat(xi2: f64, sigma2_sq: f64) -> Result<f64> {
    if !(sigma2_sq > 0.0 && sigma2_sq.is_finite()) {
        return Err(Error::Domain(format!(
            "tau_hat requires a positive variance, got {sigma2_sq}"
        )));
    }
    if !xi2.is_finite() {
        return Err(Error::Domain(format!("tau_hat requires finite xi2, got {xi2}")));
    }
    Ok(tau_unchecked(xi2, sigma2_sq))
}

#[inline]
pub(crate) fn tau_unchecked(xi2: f64, sigma2_sq: f64) -> f64 {
    let s = sigma2_sq.sqrt();
    normal::mills(xi2 / s) / s
}

/// `ξ₁ − (σ₁₂/σ₂²)ξ₂`.
#[inline]
pub fn delta_hat(block: &InstrumentBlock) -> f64 {
    block.xi1 - block.s12 / block.s22 * block.xi2
}

/// The unbiased estimator `τ̂·δ̂ + σ₁₂/σ₂²`.
#[inline]
pub fn beta_u(block: &InstrumentBlock) -> f64 {
    beta_u_parts(block.xi1, block.xi2, block.s12, block.s22)
}

#[inline]
pub(crate) fn beta_u_parts(xi1: f64, xi2: f64, s12: f64, s22: f64) -> f64 {
    let slope = s12 / s22;
    let delta = xi1 - slope * xi2;
    if delta == 0.0 {
        // Avoids 0·∞ when the Mills ratio overflows far in the left tail.
        return slope;
    }
    tau_unchecked(xi2, s22) * delta + slope
}

/// `ξ₁/ξ₂`; a zero first stage is an error.
pub fn beta_2sls_single(block: &InstrumentBlock) -> Result<f64> {
    if block.xi2 == 0.0 {
        return Err(Error::Degenerate("2SLS undefined at a zero first stage".into()));
    }
    Ok(block.xi1 / block.xi2)
}

/// Fuller's estimator with constant one, `(ξ₂ξ₁ + σ₁₂)/(ξ₂² + σ₂²)`.
#[inline]
pub fn beta_fuller(block: &InstrumentBlock) -> f64 {
    (block.xi2 * block.xi1 + block.s12) / (block.xi2 * block.xi2 + block.s22)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetKind {
    /// `[lo, hi]`; either end may be infinite.
    Interval,
    /// `(−∞, lo] ∪ [hi, ∞)` with `lo < hi`.
    UnionOfRays,
    WholeLine,
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceSet {
    pub kind: SetKind,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
}

impl ConfidenceSet {
    pub fn contains(&self, b: f64) -> bool {
        match self.kind {
            SetKind::Interval => self.lo <= b && b <= self.hi,
            SetKind::UnionOfRays => b <= self.lo || b >= self.hi,
            SetKind::WholeLine => true,
            SetKind::Empty => false,
        }
    }
}

fn fmt_end(x: f64) -> String {
    if x == f64::INFINITY {
        "∞".into()
    } else if x == f64::NEG_INFINITY {
        "-∞".into()
    } else {
        format!("{x:.6}")
    }
}

impl fmt::Display for ConfidenceSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            SetKind::Interval => {
                let open = if self.lo.is_infinite() { "(" } else { "[" };
                let close = if self.hi.is_infinite() { ")" } else { "]" };
                write!(f, "{open}{}, {}{close}", fmt_end(self.lo), fmt_end(self.hi))
            }
            SetKind::UnionOfRays => {
                write!(f, "(-∞, {}] ∪ [{}, ∞)", fmt_end(self.lo), fmt_end(self.hi))
            }
            SetKind::WholeLine => write!(f, "(-∞, ∞)"),
            SetKind::Empty => write!(f, "∅"),
        }
    }
}

/// Anderson–Rubin statistic `(ξ₁ − β₀ξ₂)² / (σ₁² − 2β₀σ₁₂ + β₀²σ₂²)`.
pub fn ar_statistic(block: &InstrumentBlock, beta0: f64) -> f64 {
    let r = block.xi1 - beta0 * block.xi2;
    r * r / (block.s11 - 2.0 * beta0 * block.s12 + beta0 * beta0 * block.s22)
}

/// The set `{β₀ : AR(β₀) ≤ χ²₁(level)}`, inverted in closed form.
pub fn ar_confidence_set(block: &InstrumentBlock, level: f64) -> Result<ConfidenceSet> {
    let q = normal::chi2_1_quantile(level)?;
    Ok(ar_set_with_critical(block, q, level))
}

pub(crate) fn ar_set_with_critical(block: &InstrumentBlock, q: f64, level: f64) -> ConfidenceSet {
    // (ξ₁ − β₀ξ₂)² − q(σ₁² − 2β₀σ₁₂ + β₀²σ₂²) ≤ 0 as aβ₀² + bβ₀ + c ≤ 0.
    let a = block.xi2 * block.xi2 - q * block.s22;
    let b = -2.0 * block.xi1 * block.xi2 + 2.0 * q * block.s12;
    let c = block.xi1 * block.xi1 - q * block.s11;
    let set = |kind, lo, hi| ConfidenceSet { kind, lo, hi, level };
    let inf = f64::INFINITY;

    let a_scale = block.xi2 * block.xi2 + q * block.s22;
    if a.abs() <= 1e-12 * a_scale {
        return if b > 0.0 {
            set(SetKind::Interval, -inf, -c / b)
        } else if b < 0.0 {
            set(SetKind::Interval, -c / b, inf)
        } else if c <= 0.0 {
            set(SetKind::WholeLine, -inf, inf)
        } else {
            set(SetKind::Empty, f64::NAN, f64::NAN)
        };
    }

    let disc = b * b - 4.0 * a * c;
    if disc <= 0.0 {
        return if a > 0.0 {
            if disc == 0.0 {
                let r = -b / (2.0 * a);
                set(SetKind::Interval, r, r)
            } else {
                set(SetKind::Empty, f64::NAN, f64::NAN)
            }
        } else {
            set(SetKind::WholeLine, -inf, inf)
        };
    }
    let sq = disc.sqrt();
    let h = -0.5 * (b + b.signum() * sq);
    let (r1, r2) = if h == 0.0 { (0.0, 0.0) } else { (h / a, c / h) };
    let (lo, hi) = (r1.min(r2), r1.max(r2));
    if a > 0.0 {
        set(SetKind::Interval, lo, hi)
    } else {
        set(SetKind::UnionOfRays, lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal::mills;
    use proptest::prelude::*;

    fn blk(xi1: f64, xi2: f64, s11: f64, s12: f64, s22: f64) -> InstrumentBlock {
        InstrumentBlock::new(xi1, xi2, s11, s12, s22).unwrap()
    }

    #[test]
    fn tau_examples() {
        assert!((tau_hat(0.0, 1.0).unwrap() - 1.253_314_137_315_500_3).abs() < 1e-15);
        assert!((tau_hat(2.0, 4.0).unwrap() - 0.5 * mills(1.0)).abs() < 1e-16);
        // 60-digit oracle: 0.327839771209399...
        assert!((tau_hat(2.0, 4.0).unwrap() - 0.327_839_771_209_399_2).abs() < 1e-15);
        assert!(matches!(tau_hat(1.0, 0.0), Err(Error::Domain(_))));
        assert!(tau_hat(1.0, -1.0).is_err());
    }

    #[test]
    fn tau_scale_rule() {
        for &(x, s2, a) in &[(1.3, 0.7, 2.0), (-2.0, 3.0, 0.1), (0.0, 1.0, 7.0)] {
            let lhs = tau_hat(a * x, a * a * s2).unwrap();
            let rhs = tau_hat(x, s2).unwrap() / a;
            assert!(((lhs - rhs) / rhs).abs() < 1e-14);
        }
    }

    #[test]
    fn delta_examples() {
        assert_eq!(delta_hat(&blk(3.0, 2.0, 1.0, 0.5, 1.0)), 2.0);
        assert_eq!(delta_hat(&blk(3.0, 2.0, 1.0, 0.0, 1.0)), 3.0);
        for c in [1.0, -3.0] {
            let (s12, s22) = (0.6, 2.0);
            assert!(delta_hat(&blk(c * s12 / s22, c, 1.0, s12, s22)).abs() < 1e-15);
        }
    }

    #[test]
    fn beta_u_examples() {
        assert_eq!(beta_u(&InstrumentBlock::standard(0.0, 2.0)), 0.0);
        let v = beta_u(&blk(3.0, 2.0, 1.0, 0.5, 1.0));
        assert!((v - (mills(2.0) * 2.0 + 0.5)).abs() < 1e-15);
        assert!((v - 1.342_738_5).abs() < 1e-7);
    }

    #[test]
    fn beta_u_far_left_tail_kernel_direction() {
        // δ̂ = 0 while the Mills ratio overflows.
        let b = blk(-50.0 * 0.5, -50.0, 1.0, 0.5, 1.0);
        assert_eq!(beta_u(&b), 0.5);
    }

    #[test]
    fn two_sls_examples() {
        assert_eq!(beta_2sls_single(&InstrumentBlock::standard(3.0, 2.0)).unwrap(), 1.5);
        assert_eq!(beta_2sls_single(&InstrumentBlock::standard(0.0, -4.0)).unwrap(), 0.0);
        assert_eq!(beta_2sls_single(&InstrumentBlock::standard(2.5, 2.5)).unwrap(), 1.0);
        assert!(matches!(
            beta_2sls_single(&InstrumentBlock::standard(1.0, 0.0)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn fuller_examples() {
        assert!((beta_fuller(&blk(3.0, 2.0, 1.0, 0.5, 1.0)) - 1.3).abs() < 1e-15);
        assert_eq!(beta_fuller(&InstrumentBlock::standard(0.0, 0.0)), 0.0);
        let x2 = 1e3;
        let v = beta_fuller(&InstrumentBlock::standard(2.0 * x2, x2));
        assert!((v - 2.0).abs() <= 10.0 / (x2 * x2));
    }

    /// Independent grid inversion of the AR statistic.
    fn grid_contains(b: &InstrumentBlock, q: f64, beta0: f64) -> bool {
        ar_statistic(b, beta0) <= q
    }

    #[test]
    fn ar_set_examples() {
        let s = ar_confidence_set(&InstrumentBlock::standard(0.0, 10.0), 0.95).unwrap();
        assert_eq!(s.kind, SetKind::Interval);
        assert!(s.contains(0.0));

        let b = InstrumentBlock::standard(3.0, 2.0);
        let s = ar_confidence_set(&b, 0.95).unwrap();
        assert_eq!(s.kind, SetKind::Interval);
        // Grid inversion at step 1e-4 to locate the endpoints.
        let q = normal::chi2_1_quantile(0.95).unwrap();
        let mut first = None;
        let mut last = None;
        let mut x = 0.0;
        while x <= 80.0 {
            if grid_contains(&b, q, x) {
                first.get_or_insert(x);
                last = Some(x);
            }
            x += 1e-4;
        }
        assert!((s.lo - first.unwrap()).abs() < 2e-4);
        assert!((s.hi - last.unwrap()).abs() < 2e-4);
        // Closed-form roots evaluated at 30 digits.
        assert!((s.lo - 0.432_348_038_476_738_6).abs() < 1e-12);
        assert!((s.hi - 75.257_766_369_265_26).abs() < 1e-9);

        // With Σ = I the statistic never exceeds ‖ξ‖² = 1.01 < q, so every β₀
        // is accepted.
        let b = InstrumentBlock::standard(1.0, 0.1);
        let s = ar_confidence_set(&b, 0.95).unwrap();
        assert_eq!(s.kind, SetKind::WholeLine);
        assert!((-2000..=2000).all(|i| grid_contains(&b, q, i as f64 * 0.05)));

        // ‖ξ‖² > q > ξ₂²: two rays.
        let b = InstrumentBlock::standard(3.0, 0.1);
        let s = ar_confidence_set(&b, 0.95).unwrap();
        assert_eq!(s.kind, SetKind::UnionOfRays);
        assert!(s.lo < s.hi);
        assert!(!grid_contains(&b, q, 0.5 * (s.lo + s.hi)));
        assert!(grid_contains(&b, q, s.lo - 1.0) && grid_contains(&b, q, s.hi + 1.0));
    }

    #[test]
    fn ar_set_whole_line_and_half_line() {
        let s = ar_confidence_set(&InstrumentBlock::standard(0.1, 0.1), 0.95).unwrap();
        assert_eq!(s.kind, SetKind::WholeLine);
        // Leading coefficient exactly zero: ξ₂² = qσ₂².
        let q = normal::chi2_1_quantile(0.95).unwrap();
        let b = InstrumentBlock::standard(1.0, q.sqrt());
        let s = ar_set_with_critical(&b, q, 0.95);
        assert_eq!(s.kind, SetKind::Interval);
        assert!(s.lo.is_infinite() || s.hi.is_infinite());
        for x in [-100.0, -1.0, 0.0, 0.3, 1.0, 5.0, 100.0] {
            assert_eq!(s.contains(x), grid_contains(&b, q, x) || (ar_statistic(&b, x) - q).abs() < 1e-9);
        }
        assert_eq!(format!("{}", ConfidenceSet { kind: SetKind::Empty, lo: 0.0, hi: 0.0, level: 0.95 }), "∅");
    }

    #[test]
    fn ar_display() {
        let s = ar_confidence_set(&InstrumentBlock::standard(3.0, 0.1), 0.95).unwrap();
        assert!(format!("{s}").starts_with("(-∞, "));
    }

    proptest! {
        #[test]
        fn ar_set_matches_pointwise_statistic(
            xi1 in -5.0..5.0f64, xi2 in -5.0..5.0f64,
            s12 in -0.9..0.9f64, level in 0.5..0.99f64, probe in -20.0..20.0f64,
        ) {
            let b = blk(xi1, xi2, 1.0, s12, 1.0);
            let set = ar_confidence_set(&b, level).unwrap();
            let q = normal::chi2_1_quantile(level).unwrap();
            let stat = ar_statistic(&b, probe);
            if (stat - q).abs() > 1e-8 * q.max(1.0) {
                prop_assert_eq!(set.contains(probe), stat <= q);
            }
        }

        #[test]
        fn shrinkage_between_slope_and_2sls(
            xi1 in -10.0..10.0f64, xi2 in 1e-3..10.0f64,
            s11 in 0.1..3.0f64, r in -0.95..0.95f64, s22 in 0.1..3.0f64,
        ) {
            let b = blk(xi1, xi2, s11, r * (s11 * s22).sqrt(), s22);
            prop_assume!(delta_hat(&b).abs() > 1e-9);
            let slope = b.s12 / b.s22;
            let u = beta_u(&b);
            let t = beta_2sls_single(&b).unwrap();
            prop_assert!((u - slope) * (t - slope) > 0.0);
            prop_assert!((u - slope).abs() < (t - slope).abs());
        }

        #[test]
        fn opposite_side_for_negative_first_stage(
            xi1 in -10.0..10.0f64, xi2 in -10.0..-1e-3f64,
            r in -0.95..0.95f64, s22 in 0.1..3.0f64,
        ) {
            let b = blk(xi1, xi2, 1.0, r * s22.sqrt(), s22);
            prop_assume!(delta_hat(&b).abs() > 1e-9);
            let slope = b.s12 / b.s22;
            let u = beta_u(&b);
            let t = beta_2sls_single(&b).unwrap();
            prop_assert!((u - slope).signum() == -(t - slope).signum());
        }
    }
}
