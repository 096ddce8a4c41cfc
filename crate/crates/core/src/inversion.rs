//! Gaver-Stehfest inversion on the real axis and density estimators of `S`.
//!
//! ```text
//! f(x) ~ (ln 2 / x) sum_{k=1}^{m} V_k L(k ln 2 / x)
//! ```

use std::f64::consts::LN_2;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::model::LognormalModel;
use crate::special::lognormal_pdf;
use crate::transform::{laplace, normal_moments, Method};
use crate::{Error, Result};

pub const DEFAULT_TERMS: usize = 14;
pub const MAX_TERMS: usize = 18;
/// Term counts above this lose most digits to cancellation in double precision.
pub const STABLE_TERMS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct StehfestRule {
    pub m: usize,
    pub weights: Vec<f64>,
}

impl StehfestRule {
    pub fn new(m: usize) -> Result<Self> {
        stehfest_weights(m)
    }

    pub fn is_unstable(&self) -> bool {
        self.m > STABLE_TERMS
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn factorial(n: u128) -> u128 {
    (1..=n).product()
}

/// Exact nonnegative rational, kept reduced.
#[derive(Clone, Copy)]
struct Ratio(u128, u128);

impl Ratio {
    fn new(num: u128, den: u128) -> Self {
        let g = gcd(num, den).max(1);
        Ratio(num / g, den / g)
    }

    fn add(self, other: Ratio) -> Option<Ratio> {
        let g = gcd(self.1, other.1);
        let lhs = self.0.checked_mul(other.1 / g)?;
        let rhs = other.0.checked_mul(self.1 / g)?;
        let den = (self.1 / g).checked_mul(other.1)?;
        Some(Ratio::new(lhs.checked_add(rhs)?, den))
    }
}

/// Classical Gaver-Stehfest weights with `N = m / 2`:
///
/// ```text
/// V_k = (-1)^(k+N) sum_{j=floor((k+1)/2)}^{min(k,N)}
///       j^N (2j)! / ((N-j)! j! (j-1)! (k-j)! (2j-k)!)
/// ```
///
/// Each sum is formed exactly in 128-bit rational arithmetic.
pub fn stehfest_weights(m: usize) -> Result<StehfestRule> {
    if m % 2 == 1 {
        return Err(Error::OddM(m));
    }
    if m > MAX_TERMS {
        return Err(Error::MTooLarge(m));
    }
    if m == 0 {
        return Err(Error::PreconditionViolation(
            "Stehfest rule needs m >= 2".into(),
        ));
    }
    let half = (m / 2) as u128;
    let mut weights = Vec::with_capacity(m);
    for k in 1..=m as u128 {
        let mut sum = Ratio(0, 1);
        for j in k.div_ceil(2)..=k.min(half) {
            let num = j.pow(half as u32) * factorial(2 * j);
            let den = factorial(half - j)
                * factorial(j)
                * factorial(j - 1)
                * factorial(k - j)
                * factorial(2 * j - k);
            sum = sum.add(Ratio::new(num, den)).ok_or(Error::MTooLarge(m))?;
        }
        let magnitude = sum.0 as f64 / sum.1 as f64;
        let sign = if (k + half).is_multiple_of(2) {
            1.0
        } else {
            -1.0
        };
        weights.push(sign * magnitude);
    }
    Ok(StehfestRule { m, weights })
}

/// `(ln 2 / x) sum_k V_k transform(k ln 2 / x)`, summed with compensation.
pub fn invert<F>(mut transform: F, x: f64, rule: &StehfestRule) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(x > 0.0) || x.is_infinite() {
        return Err(Error::DomainError(format!(
            "inversion needs x > 0, got {x}"
        )));
    }
    let a = LN_2 / x;
    let mut sum = 0.0;
    let mut comp = 0.0;
    for (k, v) in rule.weights.iter().enumerate() {
        let term = v * transform(a * (k + 1) as f64)?;
        let t = sum + term;
        comp += if sum.abs() >= term.abs() {
            (sum - t) + term
        } else {
            (term - t) + sum
        };
        sum = t;
    }
    Ok(a * (sum + comp))
}

/// `f(x)` by inverting `L_tilde`, `L_hat_IS` or `L_hat_Q`. The random
/// estimators reuse one seed (one point set) for every `theta`.
pub fn density(
    model: &LognormalModel,
    x: f64,
    method: Method,
    rule: &StehfestRule,
    reps: usize,
    seed: u64,
) -> Result<f64> {
    if method == Method::Cmc {
        return Err(Error::PreconditionViolation(
            "density supports the tilde, is and qmc transforms".into(),
        ));
    }
    invert(
        |theta| Ok(laplace(model, theta, method, reps, seed)?.value),
        x,
        rule,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub x: f64,
    pub value: f64,
    pub std_error: f64,
    pub reps: usize,
    pub seed: u64,
}

/// Conditional Monte Carlo: average over `(X_2, ..., X_n)` of the density of
/// `exp(X_1)` at `x - sum_{i>=2} exp(X_i)` given the rest.
///
/// `X_1 | rest` is normal with variance `1 / D_11` and mean
/// `mu_1 - sum_{j>=2} D_1j (X_j - mu_j) / D_11`.
pub fn density_cond_mc(
    model: &LognormalModel,
    x: f64,
    reps: usize,
    seed: u64,
) -> Result<DensityEstimate> {
    if reps < 2 {
        return Err(Error::PreconditionViolation(format!(
            "reps must be >= 2, got {reps}"
        )));
    }
    let n = model.dim();
    let mu = model.mu();
    let d = model.precision();
    let sd = (1.0 / d[(0, 0)]).sqrt();
    let done = |value, std_error| DensityEstimate {
        x,
        value,
        std_error,
        reps,
        seed,
    };
    if !(x > 0.0) {
        return Ok(done(0.0, 0.0));
    }
    if n == 1 {
        return Ok(done(lognormal_pdf(x, mu[0], sd), 0.0));
    }
    let rest = model.sigma().view((1, 1), (n - 1, n - 1)).into_owned();
    let chol = Cholesky::new(rest)
        .ok_or_else(|| Error::NotPositiveDefinite("covariance of X_2..X_n".into()))?;
    let l: DMatrix<f64> = chol.l();
    let coupling: DVector<f64> = DVector::from_fn(n - 1, |j, _| d[(0, j + 1)] / d[(0, 0)]);
    let mom = normal_moments(n - 1, reps, seed, |z| {
        let mut tail = 0.0;
        let mut shift = 0.0;
        for i in 0..n - 1 {
            let dev: f64 = (0..=i).map(|j| l[(i, j)] * z[j]).sum();
            tail += (mu[i + 1] + dev).exp();
            shift += coupling[i] * dev;
        }
        lognormal_pdf(x - tail, mu[0] - shift, sd)
    });
    Ok(done(mom.mean, mom.std_error()))
}
