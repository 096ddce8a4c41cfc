//! Saddlepoint approximation `L_tilde(theta)` and estimators of
//! `L(theta) = E exp(-theta S)`.
//!
//! With `x*` the minimiser of `h`, `Lambda = theta diag(exp(mu + x*))` and
//! `w = D x*`,
//!
//! ```text
//! log L_tilde = (1 - x*/2)' D x* - log det(I + Sigma Lambda) / 2
//! I(theta)    = sqrt(det(I + Sigma Lambda)) E v(U),   U ~ N(0, Sigma)
//! v(u)        = exp(w' (exp(u) - 1 - u))
//! ```
//!
//! Random estimators draw standard normals by inverse CDF from seeded
//! ChaCha8 streams, one stream per block of [`BLOCK`] replications, so the
//! same seed gives the same draws for every `theta` and every thread count.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::minimiser::{minimise_h, MinimiserResult, EXP_GUARD};
use crate::model::LognormalModel;
use crate::quasirandom::gaussian_qmc_block;
use crate::special::inv_norm_cdf;
use crate::{Error, Result};

/// Replications per random-number stream and per parallel work unit.
pub const BLOCK: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Tilde,
    Cmc,
    Is,
    Qmc,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Tilde => "tilde",
            Method::Cmc => "cmc",
            Method::Is => "is",
            Method::Qmc => "qmc",
        }
    }

    pub fn is_random(self) -> bool {
        matches!(self, Method::Cmc | Method::Is)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tilde" => Ok(Method::Tilde),
            "cmc" => Ok(Method::Cmc),
            "is" => Ok(Method::Is),
            "qmc" => Ok(Method::Qmc),
            _ => Err(Error::ParseError(format!("unknown method '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateWithError {
    pub value: f64,
    /// `ln(value)`, kept separately so `L_tilde` survives underflow.
    pub log_value: f64,
    pub std_error: f64,
    pub reps: usize,
    pub method: Method,
    pub theta: f64,
    pub seed: Option<u64>,
}

/// Everything derived from `x*` at one `theta`.
#[derive(Debug, Clone)]
pub struct Saddle {
    pub theta: f64,
    pub minimiser: MinimiserResult,
    /// `w = D x*`.
    pub w: DVector<f64>,
    /// `log det(I + Sigma Lambda)`.
    pub log_det: f64,
    pub log_tilde: f64,
}

impl Saddle {
    pub fn x_star(&self) -> &DVector<f64> {
        &self.minimiser.x_star
    }

    pub fn lambda(&self) -> &DVector<f64> {
        &self.minimiser.lambda_diag
    }
}

pub fn saddle(model: &LognormalModel, theta: f64) -> Result<Saddle> {
    let minimiser = minimise_h(model, theta, None)?;
    let x = &minimiser.x_star;
    let w = model.precision() * x;
    // det(I + Sigma Lambda) = det(I + L' Lambda L) for Sigma = L L'.
    let l = model.chol();
    let m = DMatrix::identity(model.dim(), model.dim())
        + l.transpose() * DMatrix::from_diagonal(&minimiser.lambda_diag) * l;
    let chol =
        Cholesky::new(m).ok_or_else(|| Error::NotPositiveDefinite("I + L' Lambda L".into()))?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log_tilde = w.sum() - 0.5 * x.dot(&w) - 0.5 * log_det;
    Ok(Saddle {
        theta,
        minimiser,
        w,
        log_det,
        log_tilde,
    })
}

pub fn log_laplace_tilde(model: &LognormalModel, theta: f64) -> Result<f64> {
    Ok(saddle(model, theta)?.log_tilde)
}

pub fn laplace_tilde(model: &LognormalModel, theta: f64) -> Result<f64> {
    Ok(log_laplace_tilde(model, theta)?.exp())
}

/// `exp(u) - 1 - u` without cancellation near zero.
pub fn expm1_minus_x(u: f64) -> f64 {
    if u.abs() < 0.05 {
        let mut term = 0.5 * u * u;
        let mut sum = term;
        for k in 3..12 {
            term *= u / k as f64;
            sum += term;
        }
        sum
    } else {
        u.exp_m1() - u
    }
}

fn log_v(w: &DVector<f64>, u: &[f64]) -> f64 {
    w.iter()
        .zip(u)
        .map(|(wi, ui)| wi * expm1_minus_x(*ui))
        .sum()
}

/// `v(u) = exp(x*' D (exp(u) - 1 - u))`.
pub fn correction_integrand_v(
    model: &LognormalModel,
    x_star: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<f64> {
    if x_star.len() != model.dim() || u.len() != model.dim() {
        return Err(Error::DimensionMismatch(
            "x_star and u must match the model".into(),
        ));
    }
    let w = model.precision() * x_star;
    let e = log_v(&w, u.as_slice());
    if e > EXP_GUARD {
        return Err(Error::Overflow(format!(
            "v exponent {e:.3e} exceeds {EXP_GUARD}"
        )));
    }
    Ok(e.exp())
}

/// Factor `A` with `A A' = (Lambda + D)^{-1}`, the scale of the saddlepoint
/// Gaussian.
pub fn saddle_scale(model: &LognormalModel, s: &Saddle) -> Result<DMatrix<f64>> {
    let h = model.precision() + DMatrix::from_diagonal(s.lambda());
    let chol = Cholesky::new(h).ok_or_else(|| Error::NotPositiveDefinite("Lambda + D".into()))?;
    let inv_lt = chol
        .l()
        .transpose()
        .try_inverse()
        .ok_or_else(|| Error::SingularSubmatrix("Cholesky factor of Lambda + D".into()))?;
    Ok(inv_lt)
}

/// Integrand of the unweighted form `I = E g(A Z)`, `Z ~ N(0, I)`:
/// `g(u) = v(u) exp(u' Lambda u / 2)`.
pub fn correction_integrand_g(s: &Saddle, u: &DVector<f64>) -> Result<f64> {
    let e = log_v(&s.w, u.as_slice()) + 0.5 * u.component_mul(u).dot(s.lambda());
    if e > EXP_GUARD {
        return Err(Error::Overflow(format!(
            "g exponent {e:.3e} exceeds {EXP_GUARD}"
        )));
    }
    Ok(e.exp())
}

/// Running mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(self, other: Moments) -> Moments {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        Moments {
            count: self.count + other.count,
            mean: self.mean + delta * other.count as f64 / n,
            m2: self.m2 + other.m2 + delta * delta * self.count as f64 * other.count as f64 / n,
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        (self.m2 / (self.count - 1) as f64 / self.count as f64).sqrt()
    }
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Standard normals for replications `block * BLOCK ..` of a seeded stream,
/// row-major `count x dim`.
pub fn normal_block(seed: u64, block: usize, count: usize, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block as u64);
    (0..count * dim)
        .map(|_| inv_norm_cdf(uniform(&mut rng)).expect("uniform lies in (0, 1)"))
        .collect()
}

/// Averages `f` over `reps` rows of independent standard normals of length
/// `dim`, in parallel blocks merged in block order.
pub(crate) fn normal_moments<F>(dim: usize, reps: usize, seed: u64, f: F) -> Moments
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let blocks = reps.div_ceil(BLOCK);
    let parts: Vec<Moments> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let count = BLOCK.min(reps - b * BLOCK);
            let z = normal_block(seed, b, count, dim);
            let mut mom = Moments::default();
            for row in z.chunks_exact(dim) {
                mom.push(f(row));
            }
            mom
        })
        .collect();
    parts.into_iter().fold(Moments::default(), Moments::merge)
}

/// Averages `f` over `reps` rows `L z` with `L L' = Sigma`.
fn mc_moments<F>(model: &LognormalModel, reps: usize, seed: u64, f: F) -> Moments
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = model.dim();
    let l = model.chol();
    normal_moments(n, reps, seed, |row| {
        let u: Vec<f64> = (0..n)
            .map(|i| (0..=i).map(|j| l[(i, j)] * row[j]).sum())
            .collect();
        f(&u)
    })
}

fn qmc_moments<F>(model: &LognormalModel, reps: usize, f: F) -> Result<Moments>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let blocks = reps.div_ceil(BLOCK);
    let parts: Result<Vec<Moments>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let count = BLOCK.min(reps - b * BLOCK);
            let q = gaussian_qmc_block(model, 1 + (b * BLOCK) as u64, count)?;
            let mut mom = Moments::default();
            let mut u = vec![0.0; model.dim()];
            for r in 0..count {
                for (j, uj) in u.iter_mut().enumerate() {
                    *uj = q[(r, j)];
                }
                mom.push(f(&u));
            }
            Ok(mom)
        })
        .collect();
    Ok(parts?.into_iter().fold(Moments::default(), Moments::merge))
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta >= 0.0) || theta.is_infinite() {
        return Err(Error::DomainError(format!(
            "theta must be finite and >= 0, got {theta}"
        )));
    }
    Ok(())
}

fn check_reps(reps: usize, min: usize) -> Result<()> {
    if reps < min {
        return Err(Error::PreconditionViolation(format!(
            "reps must be >= {min}, got {reps}"
        )));
    }
    Ok(())
}

fn correction(s: &Saddle, mom: Moments, method: Method, seed: Option<u64>) -> EstimateWithError {
    let scale = (0.5 * s.log_det).exp();
    let value = scale * mom.mean;
    EstimateWithError {
        value,
        log_value: 0.5 * s.log_det + mom.mean.ln(),
        std_error: if method == Method::Qmc {
            0.0
        } else {
            scale * mom.std_error()
        },
        reps: mom.count,
        method,
        theta: s.theta,
        seed,
    }
}

/// `I_hat` from `reps` draws of `U ~ N(0, Sigma)`.
pub fn estimate_i_is(
    model: &LognormalModel,
    theta: f64,
    reps: usize,
    seed: u64,
) -> Result<EstimateWithError> {
    check_theta(theta)?;
    check_reps(reps, 2)?;
    let s = saddle(model, theta)?;
    Ok(estimate_i_is_at(model, &s, reps, seed))
}

pub fn estimate_i_is_at(
    model: &LognormalModel,
    s: &Saddle,
    reps: usize,
    seed: u64,
) -> EstimateWithError {
    let mom = mc_moments(model, reps, seed, |u| log_v(&s.w, u).exp());
    correction(s, mom, Method::Is, Some(seed))
}

/// `I_hat` from the unweighted form, with the same normals as [`estimate_i_is`].
pub fn estimate_i_gform(
    model: &LognormalModel,
    theta: f64,
    reps: usize,
    seed: u64,
) -> Result<EstimateWithError> {
    check_theta(theta)?;
    check_reps(reps, 2)?;
    let s = saddle(model, theta)?;
    let a = saddle_scale(model, &s)?;
    let mom = normal_moments(model.dim(), reps, seed, |row| {
        let u = &a * DVector::from_row_slice(row);
        let e = log_v(&s.w, u.as_slice()) + 0.5 * u.component_mul(&u).dot(s.lambda());
        e.exp()
    });
    Ok(EstimateWithError {
        value: mom.mean,
        log_value: mom.mean.ln(),
        std_error: mom.std_error(),
        reps,
        method: Method::Is,
        theta,
        seed: Some(seed),
    })
}

/// `I_hat` from Sobol points `1..=reps` mapped through `chol * Phi^{-1}`.
pub fn estimate_i_qmc(
    model: &LognormalModel,
    theta: f64,
    reps: usize,
) -> Result<EstimateWithError> {
    check_theta(theta)?;
    check_reps(reps, 1)?;
    let s = saddle(model, theta)?;
    estimate_i_qmc_at(model, &s, reps)
}

pub fn estimate_i_qmc_at(
    model: &LognormalModel,
    s: &Saddle,
    reps: usize,
) -> Result<EstimateWithError> {
    let mom = qmc_moments(model, reps, |u| log_v(&s.w, u).exp())?;
    Ok(correction(s, mom, Method::Qmc, None))
}

/// Crude Monte Carlo average of `exp(-theta S)`.
pub fn laplace_cmc(
    model: &LognormalModel,
    theta: f64,
    reps: usize,
    seed: u64,
) -> Result<EstimateWithError> {
    check_theta(theta)?;
    check_reps(reps, 2)?;
    let mu = model.mu();
    let mom = mc_moments(model, reps, seed, |u| {
        let s: f64 = u.iter().zip(mu.iter()).map(|(ui, m)| (ui + m).exp()).sum();
        (-theta * s).exp()
    });
    Ok(EstimateWithError {
        value: mom.mean,
        log_value: mom.mean.ln(),
        std_error: mom.std_error(),
        reps,
        method: Method::Cmc,
        theta,
        seed: Some(seed),
    })
}

/// `L(theta)` by the chosen method. `is` and `qmc` return `L_tilde * I_hat`.
pub fn laplace(
    model: &LognormalModel,
    theta: f64,
    method: Method,
    reps: usize,
    seed: u64,
) -> Result<EstimateWithError> {
    check_theta(theta)?;
    match method {
        Method::Cmc => laplace_cmc(model, theta, reps, seed),
        Method::Tilde => {
            let s = saddle(model, theta)?;
            Ok(EstimateWithError {
                value: s.log_tilde.exp(),
                log_value: s.log_tilde,
                std_error: 0.0,
                reps: 0,
                method,
                theta,
                seed: None,
            })
        }
        Method::Is | Method::Qmc => {
            let s = saddle(model, theta)?;
            let i_hat = if method == Method::Is {
                check_reps(reps, 2)?;
                estimate_i_is_at(model, &s, reps, seed)
            } else {
                check_reps(reps, 1)?;
                estimate_i_qmc_at(model, &s, reps)?
            };
            let tilde = s.log_tilde.exp();
            Ok(EstimateWithError {
                value: tilde * i_hat.value,
                log_value: s.log_tilde + i_hat.log_value,
                std_error: tilde * i_hat.std_error,
                reps,
                method,
                theta,
                seed: i_hat.seed,
            })
        }
    }
}
