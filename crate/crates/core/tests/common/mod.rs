#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sln_core::LognormalModel;

pub fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

pub fn table1() -> LognormalModel {
    LognormalModel::new(DVector::zeros(2), mat(&[&[1.0, 0.5], &[0.5, 1.0]])).unwrap()
}

pub fn example31() -> LognormalModel {
    LognormalModel::from_precision(
        DVector::from_vec(vec![-10.0, 0.0, 10.0]),
        mat(&[&[14.0, -2.0, -2.0], &[-2.0, 1.0, 0.0], &[-2.0, 0.0, 0.5]]),
    )
    .unwrap()
}

pub fn example32() -> LognormalModel {
    LognormalModel::from_precision(
        DVector::from_vec(vec![1.0, 2.0, 3.0]),
        mat(&[&[3.0, -0.9, 0.1], &[-0.9, 2.0, -1.1], &[0.1, -1.1, 1.0]]),
    )
    .unwrap()
}

pub fn scalar(sigma2: f64) -> LognormalModel {
    LognormalModel::new(DVector::zeros(1), DMatrix::from_element(1, 1, sigma2)).unwrap()
}

/// Stationary AR(1) covariance `rho^|i-j|`; its precision has positive row sums.
pub fn ar1(n: usize, rho: f64, mu: f64) -> LognormalModel {
    let sigma = DMatrix::from_fn(n, n, |i, j| rho.powi((i as i32 - j as i32).abs()));
    LognormalModel::new(DVector::from_element(n, mu), sigma).unwrap()
}

/// Strongly correlated triple with a negative precision row sum.
pub fn mixed() -> LognormalModel {
    let sigma = mat(&[&[1.0, 0.9, 0.5], &[0.9, 1.0, 0.7], &[0.5, 0.7, 1.0]]);
    LognormalModel::new(DVector::from_vec(vec![0.5, -0.5, 0.0]), sigma).unwrap()
}

/// Covariance `A A' + n/4 I` with entries of `A` uniform on [-1, 1].
pub fn random_sigma(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * (n as f64 / 4.0)
}

pub fn random_model(rng: &mut ChaCha8Rng, n: usize) -> LognormalModel {
    let sigma = random_sigma(rng, n);
    let mu = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    LognormalModel::new(mu, sigma).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b) / b
}
