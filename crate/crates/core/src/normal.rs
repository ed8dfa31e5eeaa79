//! Standard normal kernels and the Mills ratio.
//!
//! Everything here is built on the scaled complementary error function
//! `erfcx(t) = exp(t²)·erfc(t)`:
//!
//! * `|t| <= 0.46875`: Cody's rational approximation to `erf`,
//! * `0.46875 < t <= 4`: Cody's rational approximation to `erfcx`,
//! * `t > 4`: the Laplace continued fraction, evaluated backwards with a
//!   fixed depth (48 terms up to 6, 24 up to 8, 12 beyond).
//!
//! Gaussian factors `exp(±x²/2)` are always formed from the exact argument
//! with a split `x = x_h + x_l`, `x_h` a multiple of 1/16, so that `x_h²` is
//! exact and the exponent carries no rounding error from squaring.
//!
//! The Mills ratio exceeds `f64::MAX` below `x ≈ -37.67` and evaluates to
//! `+inf` there; `Φ` and `φ` become subnormal below `x ≈ -37.5` and are
//! correctly rounded to within one subnormal ulp.

use crate::error::{Error, Result};

pub(crate) const SQRT_2PI: f64 = 2.506_628_274_631_000_7;
pub(crate) const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const SQRT_PI_OVER_2: f64 = 1.253_314_137_315_500_3;
const INV_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

const ERF_SMALL: f64 = 0.468_75;
const RATIONAL_LIMIT: f64 = 4.0;
/// Below this `x`, `exp(-x²/2)` is computed at a 2^64 offset and rescaled once.
const SUBNORMAL_GUARD: f64 = -37.0;
const TWO_POW_64: f64 = 18_446_744_073_709_551_616.0;
const TWO_POW_NEG_64: f64 = 1.0 / TWO_POW_64;

const ERF_A: [f64; 5] = [
    3.161_123_743_870_565_6,
    113.864_154_151_050_16,
    377.485_237_685_302_02,
    3_209.377_589_138_469_4,
    0.185_777_706_184_603_15,
];
const ERF_B: [f64; 4] = [
    23.601_290_952_344_12,
    244.024_637_934_444_17,
    1_282.616_526_077_372_3,
    2_844.236_833_439_170_6,
];
const ERFCX_C: [f64; 9] = [
    0.564_188_496_988_670_1,
    8.883_149_794_388_376,
    66.119_190_637_141_63,
    298.635_138_197_400_1,
    881.952_221_241_769_1,
    1_712.047_612_634_070_6,
    2_051.078_377_826_071_5,
    1_230.339_354_797_997_2,
    2.153_115_354_744_038_5e-8,
];
const ERFCX_D: [f64; 8] = [
    15.744_926_110_709_835,
    117.693_950_891_312_5,
    537.181_101_862_009_9,
    1_621.389_574_566_690_2,
    3_290.799_235_733_459_6,
    4_362.619_090_143_247,
    3_439.367_674_143_721_6,
    1_230.339_354_803_749_4,
];

/// `erf(t) / t` for `|t| <= 0.46875`, as a function of `z = t²`.
#[inline]
fn erf_over_t(z: f64) -> f64 {
    ((((ERF_A[4] * z + ERF_A[0]) * z + ERF_A[1]) * z + ERF_A[2]) * z + ERF_A[3])
        / ((((z + ERF_B[0]) * z + ERF_B[1]) * z + ERF_B[2]) * z + ERF_B[3])
}

#[inline]
fn erfcx_rational(t: f64) -> f64 {
    let c = &ERFCX_C;
    let d = &ERFCX_D;
    let num = ((((((((c[8] * t + c[0]) * t + c[1]) * t + c[2]) * t + c[3]) * t + c[4]) * t
        + c[5])
        * t
        + c[6])
        * t)
        + c[7];
    let den = ((((((((t + d[0]) * t + d[1]) * t + d[2]) * t + d[3]) * t + d[4]) * t + d[5])
        * t
        + d[6])
        * t)
        + d[7];
    num / den
}

#[inline]
fn erfcx_continued_fraction(t: f64) -> f64 {
    let depth = if t <= 6.0 {
        48
    } else if t <= 8.0 {
        24
    } else {
        12
    };
    let mut tail = 0.0;
    for k in (1..=depth).rev() {
        tail = (0.5 * k as f64) / (t + tail);
    }
    INV_SQRT_PI / (t + tail)
}

/// `erfcx(t)` for `t >= 0`.
#[inline]
fn erfcx_nonneg(t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if t <= ERF_SMALL {
        let z = t * t;
        z.exp() * (1.0 - t * erf_over_t(z))
    } else if t <= RATIONAL_LIMIT {
        erfcx_rational(t)
    } else {
        erfcx_continued_fraction(t)
    }
}

#[inline]
fn split16(x: f64) -> (f64, f64) {
    let hi = (x * 16.0).trunc() / 16.0;
    (hi, (x - hi) * (x + hi))
}

/// `exp(-x²/2)` without rounding error in the square.
#[inline]
pub(crate) fn exp_neg_half_sq(x: f64) -> f64 {
    let (hi, rest) = split16(x);
    (-0.5 * hi * hi).exp() * (-0.5 * rest).exp()
}

/// `exp(x²/2)`; overflows to `+inf` past `|x| ≈ 37.67`.
#[inline]
fn exp_half_sq(x: f64) -> f64 {
    let (hi, rest) = split16(x);
    (0.5 * hi * hi).exp() * (0.5 * rest).exp()
}

/// `2^64 · exp(-x²/2)`, for arguments where the unscaled value is subnormal.
#[inline]
fn exp_neg_half_sq_scaled(x: f64) -> f64 {
    let (hi, rest) = split16(x);
    (-0.5 * hi * hi + 64.0 * std::f64::consts::LN_2).exp() * (-0.5 * rest).exp()
}

#[inline]
fn check_finite(x: f64, what: &str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what}: argument must be finite, got {x}")))
    }
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> Result<f64> {
    check_finite(x, "std_normal_pdf")?;
    Ok(pdf(x))
}

/// Standard normal distribution function Φ.
pub fn std_normal_cdf(x: f64) -> Result<f64> {
    check_finite(x, "std_normal_cdf")?;
    Ok(cdf(x))
}

/// Mills ratio `(1 - Φ(x)) / φ(x)`.
pub fn mills_ratio(x: f64) -> Result<f64> {
    check_finite(x, "mills_ratio")?;
    Ok(mills(x))
}

#[inline]
pub(crate) fn pdf(x: f64) -> f64 {
    if x.abs() > -SUBNORMAL_GUARD {
        (exp_neg_half_sq_scaled(x) * INV_SQRT_2PI) * TWO_POW_NEG_64
    } else {
        exp_neg_half_sq(x) * INV_SQRT_2PI
    }
}

#[inline]
pub(crate) fn cdf(x: f64) -> f64 {
    let t = x * FRAC_1_SQRT_2;
    if t.abs() <= ERF_SMALL {
        return 0.5 + 0.5 * t * erf_over_t(t * t);
    }
    if x > 0.0 {
        1.0 - upper_tail(x)
    } else {
        upper_tail(-x)
    }
}

/// `1 - Φ(y)` for `y > 0`.
#[inline]
fn upper_tail(y: f64) -> f64 {
    let scaled = erfcx_nonneg(y * FRAC_1_SQRT_2);
    if y > -SUBNORMAL_GUARD {
        (0.5 * scaled * exp_neg_half_sq_scaled(y)) * TWO_POW_NEG_64
    } else {
        0.5 * scaled * exp_neg_half_sq(y)
    }
}

#[inline]
pub(crate) fn mills(x: f64) -> f64 {
    if x >= 0.0 {
        SQRT_PI_OVER_2 * erfcx_nonneg(x * FRAC_1_SQRT_2)
    } else {
        let y = -x;
        SQRT_2PI * exp_half_sq(y) - SQRT_PI_OVER_2 * erfcx_nonneg(y * FRAC_1_SQRT_2)
    }
}

/// Natural log of the Mills ratio, finite for every finite `x`.
pub(crate) fn ln_mills(x: f64) -> f64 {
    if x >= -30.0 {
        mills(x).ln()
    } else {
        // 1 - Φ(x) = Φ(-x) ≈ 1 here; ln(Φ(-x)) = ln1p(-Φ(x)).
        (0.5 * x * x) + SQRT_2PI.ln() + (-cdf(x)).ln_1p()
    }
}

/// `1/mills(z) - z`, strictly positive for all finite `z`.
///
/// Evaluated with the continued fraction `1/(z + 2/(z + 3/(z + ...)))` for
/// large `z`, where the direct difference cancels.
pub(crate) fn inverse_mills_excess(z: f64) -> f64 {
    if z <= 6.0 {
        1.0 / mills(z) - z
    } else {
        let mut tail = 0.0;
        for k in (2..=40).rev() {
            tail = k as f64 / (z + tail);
        }
        1.0 / (z + tail)
    }
}

/// Standard normal quantile.
///
/// Acklam's rational approximation followed by one Halley step against
/// [`std_normal_cdf`].
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "normal quantile requires p in (0,1), got {p}"
        )));
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    // Halley refinement; the residual is taken in the smaller tail.
    let e = if x <= 0.0 { cdf(x) - p } else { (1.0 - p) - upper_tail(x) };
    let u = e * SQRT_2PI / exp_neg_half_sq(x);
    Ok(x - u / (1.0 + 0.5 * x * u))
}

/// The `level` quantile of the χ² distribution with one degree of freedom.
pub fn chi2_1_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("level must lie in (0,1), got {level}")));
    }
    let z = std_normal_quantile(0.5 + 0.5 * level)?;
    Ok(z * z)
}
