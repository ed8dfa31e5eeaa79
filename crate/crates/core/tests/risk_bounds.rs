use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use unbiased_iv::mc::{self, StreamKey};
use unbiased_iv::risk;
use unbiased_iv::simulation::Scenario;
use unbiased_iv::single::{beta_u, tau_hat};
use unbiased_iv::{InstrumentBlock, ReducedFormStats};

fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn general_sigma() -> DMatrix<f64> {
    let m = DMatrix::from_row_slice(
        6,
        6,
        &[
            1.0, 0.2, -0.1, 0.3, 0.0, 0.1, //
            0.0, 0.9, 0.2, -0.2, 0.4, 0.0, //
            0.1, 0.0, 1.1, 0.1, 0.0, 0.3, //
            0.0, 0.3, 0.0, 0.8, 0.1, -0.1, //
            0.2, 0.0, 0.1, 0.0, 1.2, 0.2, //
            0.0, 0.1, 0.0, 0.2, 0.0, 0.7,
        ],
    );
    &m * m.transpose()
}

/// GLS coefficients of `ξ` on `P = I₂ ⊗ π*` from the normal equations.
fn gls_oracle(xi: &DVector<f64>, sigma: &DMatrix<f64>, pi: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let k = pi.len();
    let mut p = DMatrix::zeros(2 * k, 2);
    p.view_mut((0, 0), (k, 1)).copy_from(pi);
    p.view_mut((k, 1), (k, 1)).copy_from(pi);
    let sinv = sigma.clone().lu().try_inverse().unwrap();
    let info = p.transpose() * &sinv * &p;
    let cov = info.clone().lu().try_inverse().unwrap();
    (&cov * p.transpose() * &sinv * xi, cov)
}

#[test]
fn submodel_statistics_match_gls_normal_equations() {
    let sigma = general_sigma();
    let mut rng = StreamKey::new(41, 0).rng(0);
    for _ in 0..200 {
        let xi = DVector::from_fn(6, |_, _| rand::Rng::random_range(&mut rng, -3.0..3.0));
        let pi = DVector::from_fn(3, |_, _| rand::Rng::random_range(&mut rng, 0.1..2.0));
        let st = ReducedFormStats::from_stacked(&xi, sigma.clone()).unwrap();
        let sub = risk::submodel_stats(&st, &pi).unwrap();
        let (b, cov) = gls_oracle(&xi, &sigma, &pi);
        assert!((sub.xi_star[0] - b[0]).abs() <= 1e-10 * b[0].abs().max(1.0));
        assert!((sub.xi_star[1] - b[1]).abs() <= 1e-10 * b[1].abs().max(1.0));
        for r in 0..2 {
            for c in 0..2 {
                assert!((sub.sigma_star[(r, c)] - cov[(r, c)]).abs() <= 1e-10 * cov.amax());
            }
        }
    }
}

#[test]
fn oracle_is_unbiased_in_the_attainable_case() {
    let qz = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.2, 0.8, 0.0, 0.1, 0.0, 0.5]);
    let quv = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 1.0]);
    let pi = dv(&[1.0, 1.2, 0.8]);
    let beta = 0.3;
    let sc = Scenario::new(pi.clone(), beta, quv.kronecker(&qz), 1_000_000, 42).unwrap();
    let sampler = sc.sampler().unwrap();
    let acc = mc::mean(1_000_000, StreamKey::new(42, 0), |rng| {
        risk::oracle_beta(&sampler.draw(rng), &pi).unwrap()
    });
    assert!(acc.t_stat(beta).abs() <= 4.0, "mean {} se {}", acc.mean, acc.std_error());
}

#[test]
fn single_instrument_bound_is_the_mad_of_beta_u() {
    let (pi, beta, s12) = (1.5, 0.4, 0.5);
    let sigma = DMatrix::from_row_slice(2, 2, &[1.0, s12, s12, 1.0]);
    let bound = risk::mad_lower_bound(&dv(&[pi]), beta, &sigma, 1_000_000, StreamKey::new(43, 0)).unwrap();
    let direct = mc::mean(1_000_000, StreamKey::new(43, 1), |rng| {
        let a: f64 = rand::Rng::sample(rng, rand_distr::StandardNormal);
        let b: f64 = rand::Rng::sample(rng, rand_distr::StandardNormal);
        let v = s12 * a + (1.0 - s12 * s12).sqrt() * b;
        let blk = InstrumentBlock::new(beta * pi + v, pi + a, 1.0, s12, 1.0).unwrap();
        (beta_u(&blk) - beta).abs()
    });
    let se = (bound.std_error.powi(2) + direct.std_error().powi(2)).sqrt();
    assert!((bound.value - direct.mean).abs() <= 4.0 * se, "{} vs {}", bound.value, direct.mean);
}

#[test]
fn bound_decreases_along_a_ray() {
    let sigma = general_sigma();
    let dir = dv(&[0.5, 1.0, 0.3]);
    let vals: Vec<f64> = [0.5, 1.0, 2.0, 4.0]
        .iter()
        .map(|&t| risk::mad_lower_bound(&(&dir * t), 1.0, &sigma, 100_000, StreamKey::new(44, 0)).unwrap().value)
        .collect();
    for w in vals.windows(2) {
        assert!(w[1] < w[0], "{vals:?}");
    }
}

fn transform_stats(st: &ReducedFormStats, a1: f64, a2: f64, a3: f64) -> ReducedFormStats {
    let k = st.k();
    let a = DMatrix::from_row_slice(2, 2, &[a1, a2, 0.0, a3]).kronecker(&DMatrix::identity(k, k));
    let sigma = &a * st.sigma() * a.transpose();
    ReducedFormStats::from_stacked(&(&a * st.stacked()), (&sigma + sigma.transpose()) * 0.5).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn oracle_is_equivariant(
        xi in prop::collection::vec(-3.0..3.0f64, 6),
        pi in prop::collection::vec(0.1..2.0f64, 3),
        a1 in prop_oneof![-3.0..-0.1f64, 0.1..3.0f64],
        a2 in -3.0..3.0f64,
        a3 in 0.1..5.0f64,
    ) {
        let st = ReducedFormStats::from_stacked(&dv(&xi), general_sigma()).unwrap();
        let pi = dv(&pi);
        let base = risk::oracle_beta(&st, &pi).unwrap();
        let moved = risk::oracle_beta(&transform_stats(&st, a1, a2, a3), &pi).unwrap();
        let want = (a1 * base + a2) / a3;
        // Rounding in the inputs is amplified by τ̂ when ξ*₂ is far below zero.
        let b = risk::submodel_stats(&st, &pi).unwrap().block().unwrap();
        let tau = tau_hat(b.xi2, b.s22).unwrap();
        let cond = tau * (b.xi1.abs() + (b.s12 / b.s22 * b.xi2).abs()) + (b.s12 / b.s22).abs();
        let scale = (a1.abs() * cond + a2.abs()).max(1.0) / a3;
        prop_assert!((moved - want).abs() <= 1e-12 * scale, "{moved} vs {want}");
    }
}
