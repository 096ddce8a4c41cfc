mod common;

use common::*;
use sln_core::oracle::{laplace_quadrature, log_laplace_quadrature, QuadratureSpec};
use sln_core::transform::{
    estimate_i_gform, estimate_i_is, estimate_i_qmc, laplace, laplace_cmc, log_laplace_tilde,
    Method,
};

const SEED: u64 = 42;

fn oracle_correction(m: &sln_core::LognormalModel, theta: f64) -> f64 {
    let log_l = log_laplace_quadrature(m, theta, &QuadratureSpec::default()).unwrap();
    (log_l - log_laplace_tilde(m, theta).unwrap()).exp()
}

#[test]
fn correction_tends_to_one_qmc() {
    let m = table1();
    let small = estimate_i_qmc(&m, 1e2, 1 << 16).unwrap().value;
    let large = estimate_i_qmc(&m, 1e8, 1 << 16).unwrap().value;
    assert!((large - 1.0).abs() <= 0.01, "I(1e8) = {large}");
    assert!(
        (large - 1.0).abs() < (small - 1.0).abs(),
        "{small} vs {large}"
    );
}

#[test]
fn correction_decays_slowly_on_mixed_sign_model() {
    // I(theta) - 1 shrinks at iterated-logarithm speed here, so at 1e8 it is
    // still outside the 1e-2 band.
    let m = example32();
    let thetas = [1e3, 1e4, 1e6, 1e8, 1e12, 1e20];
    let exact: Vec<f64> = thetas.iter().map(|t| oracle_correction(&m, *t)).collect();
    assert!(exact.windows(2).all(|w| w[1] < w[0]), "{exact:?}");
    assert!(exact[3] - 1.0 > 0.015);
    for (t, want) in thetas.iter().zip(&exact) {
        let got = estimate_i_qmc(&m, *t, 1 << 16).unwrap().value;
        assert!((got - want).abs() < 2e-4, "theta={t}: {got} vs {want}");
    }
}

#[test]
fn correction_is_not_monotone_at_moderate_theta() {
    let m = table1();
    let exact: Vec<f64> = [1e2, 1e4, 1e6, 1e8]
        .iter()
        .map(|t| oracle_correction(&m, *t))
        .collect();
    assert!(exact[1] > exact[0]);
    assert!(exact[3] < exact[2] && exact[2] < exact[1]);
    for (t, want) in [1e2, 1e4, 1e6].iter().zip(&exact) {
        let est = estimate_i_is(&m, *t, 200_000, SEED).unwrap();
        assert!((est.value - want).abs() <= 3.0 * est.std_error, "theta={t}");
    }
}

#[test]
fn weighted_and_unweighted_forms_agree() {
    for m in [table1(), example32(), mixed()] {
        for theta in [1.0, 100.0, 1e4] {
            let v = estimate_i_is(&m, theta, 100_000, SEED).unwrap();
            let g = estimate_i_gform(&m, theta, 100_000, SEED).unwrap();
            let se = v.std_error.hypot(g.std_error);
            assert!(
                (v.value - g.value).abs() <= 3.0 * se,
                "theta={theta}: {v:?} {g:?}"
            );
        }
    }
}

#[test]
fn crude_and_importance_sampling_agree() {
    let m = table1();
    for theta in [0.1, 1.0, 10.0] {
        let cmc = laplace_cmc(&m, theta, 200_000, SEED).unwrap();
        let is = laplace(&m, theta, Method::Is, 200_000, SEED + 1).unwrap();
        let se = cmc.std_error.hypot(is.std_error);
        assert!((cmc.value - is.value).abs() <= 3.0 * se, "theta={theta}");
    }
}

#[test]
fn qmc_doubling_is_below_is_noise() {
    let m = table1();
    for theta in [1.0, 100.0] {
        let a = estimate_i_qmc(&m, theta, 1 << 16).unwrap().value;
        let b = estimate_i_qmc(&m, theta, 1 << 17).unwrap().value;
        let is = estimate_i_is(&m, theta, 1 << 16, SEED).unwrap();
        assert!(
            (a - b).abs() < is.std_error,
            "theta={theta}: {a} {b} {}",
            is.std_error
        );
    }
}

#[test]
fn random_methods_bracket_the_oracle_at_one() {
    let m = table1();
    let truth = laplace_quadrature(&m, 1.0, &QuadratureSpec::default()).unwrap();
    let is = laplace(&m, 1.0, Method::Is, 100_000, SEED).unwrap();
    let cmc = laplace(&m, 1.0, Method::Cmc, 100_000, SEED).unwrap();
    let qmc = laplace(&m, 1.0, Method::Qmc, 100_000, SEED).unwrap();
    assert!((is.value - truth).abs() <= 3.0 * is.std_error);
    assert!((cmc.value - truth).abs() <= 3.0 * cmc.std_error);
    assert!((qmc.value - truth).abs() <= 3.0 * is.std_error);
    let tilde = laplace(&m, 1.0, Method::Tilde, 0, SEED).unwrap();
    assert!(rel(tilde.value, truth).abs() < 2e-2);
}

#[test]
fn common_random_numbers_give_a_smooth_curve() {
    let m = table1();
    let thetas: Vec<f64> = (0..40).map(|k| 0.5 + 0.05 * k as f64).collect();
    let values: Vec<f64> = thetas
        .iter()
        .map(|t| estimate_i_is(&m, *t, 20_000, SEED).unwrap().value)
        .collect();
    // Second differences of a smooth curve are O(h^2); independent draws would
    // leave noise of the size of the standard error.
    let se = estimate_i_is(&m, 1.0, 20_000, SEED).unwrap().std_error;
    let worst = values
        .windows(3)
        .map(|w| (w[0] - 2.0 * w[1] + w[2]).abs())
        .fold(0.0, f64::max);
    assert!(worst < 0.05 * se, "worst={worst} se={se}");
}
