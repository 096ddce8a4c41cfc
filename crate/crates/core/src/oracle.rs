//! Slow reference values: tensor Gauss-Hermite (or nested adaptive) quadrature
//! of `L(theta)` for `n <= 3`, and the convolution integral for the density of
//! `S` when `n = 2`.
//!
//! In the saddlepoint frame `x = x* + A y` with `A A' = (Lambda + D)^{-1}`,
//!
//! ```text
//! L = exp(-h(x*)) det(Sigma)^{-1/2} det(A) E F(Y),   Y ~ N(0, I)
//! F = exp(-[sum_i lambda_i (e^d_i - 1 - d_i - d_i^2 / 2) + g' d]),  d = A y
//! ```
//!
//! where `g` is the gradient of `h` at the computed `x*`, so the identity is
//! exact even when `x*` is only approximate.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::minimiser::{h_value, minimise_h};
use crate::model::LognormalModel;
use crate::quadrature::{adaptive_gk, gauss_hermite, pairwise_sum};
use crate::{Error, Result};

pub const MAX_DIM: usize = 3;
pub const NODE_CAP: usize = 10_000_000;
pub const REL_TOL: f64 = 1e-10;
const BOX: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Centering {
    AtMinimiser,
    AtMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    GaussHermite,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadratureSpec {
    /// Starting rule size; doubled until successive values agree.
    pub nodes_per_dim: usize,
    pub centering: Centering,
    pub scheme: Scheme,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            nodes_per_dim: 16,
            centering: Centering::AtMinimiser,
            scheme: Scheme::GaussHermite,
        }
    }
}

impl QuadratureSpec {
    fn validate(&self, dim: usize) -> Result<()> {
        if self.nodes_per_dim < 8 {
            return Err(Error::PreconditionViolation(format!(
                "nodes_per_dim must be >= 8, got {}",
                self.nodes_per_dim
            )));
        }
        if (self.nodes_per_dim as f64).powi(dim as i32) > NODE_CAP as f64 {
            return Err(Error::DimensionTooLarge(format!(
                "{}^{dim} nodes exceed the cap {NODE_CAP}",
                self.nodes_per_dim
            )));
        }
        Ok(())
    }
}

type Rule = Arc<(Vec<f64>, Vec<f64>)>;

fn cached_rule(n: usize) -> Result<Rule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Rule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(rule) = cache.lock().expect("rule cache poisoned").get(&n) {
        return Ok(rule.clone());
    }
    let rule = Arc::new(gauss_hermite(n)?);
    cache
        .lock()
        .expect("rule cache poisoned")
        .insert(n, rule.clone());
    Ok(rule)
}

/// Integrand `F` over standard-normal coordinates plus its log prefactor.
struct Frame {
    log_prefactor: f64,
    a: DMatrix<f64>,
    kind: FrameKind,
}

enum FrameKind {
    Saddle {
        lambda: DVector<f64>,
        grad: DVector<f64>,
    },
    Raw {
        theta: f64,
        mu: DVector<f64>,
    },
}

impl Frame {
    fn new(model: &LognormalModel, theta: f64, centering: Centering) -> Result<Self> {
        match centering {
            Centering::AtMean => Ok(Frame {
                log_prefactor: 0.0,
                a: model.chol().clone(),
                kind: FrameKind::Raw {
                    theta,
                    mu: model.mu().clone(),
                },
            }),
            Centering::AtMinimiser => {
                let m = minimise_h(model, theta, None)?;
                let x = &m.x_star;
                let lambda = m.lambda_diag.clone();
                let grad = &lambda + model.precision() * x;
                let h = model.precision() + DMatrix::from_diagonal(&lambda);
                let chol = Cholesky::new(h)
                    .ok_or_else(|| Error::NotPositiveDefinite("Lambda + D".into()))?;
                let log_det_l: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum();
                let a = chol.l().transpose().try_inverse().ok_or_else(|| {
                    Error::SingularSubmatrix("Cholesky factor of Lambda + D".into())
                })?;
                let h_star = h_value(model, theta, x)?;
                Ok(Frame {
                    log_prefactor: -h_star - 0.5 * model.log_det_sigma() - log_det_l,
                    a,
                    kind: FrameKind::Saddle { lambda, grad },
                })
            }
        }
    }

    fn log_integrand(&self, y: &[f64]) -> f64 {
        let n = y.len();
        let mut exponent = 0.0;
        for i in 0..n {
            let d: f64 = (0..n).map(|j| self.a[(i, j)] * y[j]).sum();
            exponent -= match &self.kind {
                FrameKind::Saddle { lambda, grad } => {
                    // e^d - 1 - d - d^2/2, series near zero
                    let r = if d.abs() < 0.1 {
                        let mut term = d * d * d / 6.0;
                        let mut s = term;
                        for k in 4..14 {
                            term *= d / k as f64;
                            s += term;
                        }
                        s
                    } else {
                        d.exp_m1() - d - 0.5 * d * d
                    };
                    lambda[i] * r + grad[i] * d
                }
                FrameKind::Raw { theta, mu } => theta * (mu[i] + d).exp(),
            };
        }
        exponent
    }
}

fn check_dim(model: &LognormalModel) -> Result<()> {
    if model.dim() > MAX_DIM {
        return Err(Error::DimensionTooLarge(format!(
            "quadrature oracle supports n <= {MAX_DIM}, got {}",
            model.dim()
        )));
    }
    Ok(())
}

fn gauss_hermite_mean(frame: &Frame, dim: usize, nodes: usize) -> Result<f64> {
    let rule = cached_rule(nodes)?;
    let (y, w) = (&rule.0, &rule.1);
    let slices: Vec<f64> = (0..nodes)
        .into_par_iter()
        .map(|i0| {
            let mut point = vec![y[i0]; dim];
            let inner = nodes.pow(dim as u32 - 1);
            let mut terms = Vec::with_capacity(inner);
            for rest in 0..inner {
                let mut r = rest;
                let mut weight = w[i0];
                for p in point.iter_mut().skip(1) {
                    let k = r % nodes;
                    r /= nodes;
                    *p = y[k];
                    weight *= w[k];
                }
                // zero weights beside huge F would give NaN
                terms.push(if weight == 0.0 {
                    0.0
                } else {
                    (weight.ln() + frame.log_integrand(&point)).exp()
                });
            }
            pairwise_sum(&terms)
        })
        .collect();
    Ok(pairwise_sum(&slices))
}

fn adaptive_mean(frame: &Frame, dim: usize, rel_tol: f64) -> Result<f64> {
    // The Gaussian weight is folded into the exponent so that large values
    // of F never meet vanishing weights.
    fn level(
        frame: &Frame,
        prefix: &mut Vec<f64>,
        log_weight: f64,
        dim: usize,
        rel_tol: f64,
    ) -> Result<f64> {
        let log_norm = -0.5 * (2.0 * std::f64::consts::PI).ln();
        let (v, _) = adaptive_gk(
            |t| {
                let lw = log_weight + log_norm - 0.5 * t * t;
                prefix.push(t);
                let out = if prefix.len() == dim {
                    Ok((lw + frame.log_integrand(prefix)).exp())
                } else {
                    level(frame, prefix, lw, dim, rel_tol)
                };
                prefix.pop();
                out
            },
            -BOX,
            BOX,
            rel_tol,
            1e-300,
        )?;
        Ok(v)
    }
    level(frame, &mut Vec::with_capacity(dim), 0.0, dim, rel_tol)
}

/// `log L(theta)` by quadrature.
pub fn log_laplace_quadrature(
    model: &LognormalModel,
    theta: f64,
    spec: &QuadratureSpec,
) -> Result<f64> {
    check_dim(model)?;
    spec.validate(model.dim())?;
    if !(theta >= 0.0) || theta.is_infinite() {
        return Err(Error::DomainError(format!(
            "theta must be finite and >= 0, got {theta}"
        )));
    }
    let frame = Frame::new(model, theta, spec.centering)?;
    let n = model.dim();
    let mean = match spec.scheme {
        Scheme::GaussHermite => {
            let mut nodes = spec.nodes_per_dim;
            let mut prev = gauss_hermite_mean(&frame, n, nodes)?;
            loop {
                nodes *= 2;
                if (nodes as f64).powi(n as i32) > NODE_CAP as f64 {
                    return Err(Error::NonConvergent(format!(
                        "Gauss-Hermite did not settle to {REL_TOL:e} below the node cap \
                         (last value {prev:.16e})"
                    )));
                }
                let cur = gauss_hermite_mean(&frame, n, nodes)?;
                if (cur - prev).abs() <= REL_TOL * cur.abs() {
                    break cur;
                }
                prev = cur;
            }
        }
        Scheme::Adaptive => {
            let coarse = adaptive_mean(&frame, n, 1e-11)?;
            let fine = adaptive_mean(&frame, n, 1e-13)?;
            if (coarse - fine).abs() > REL_TOL * fine.abs() {
                return Err(Error::NonConvergent(format!(
                    "adaptive refinement moved the value from {coarse:e} to {fine:e}"
                )));
            }
            fine
        }
    };
    Ok(frame.log_prefactor + mean.ln())
}

pub fn laplace_quadrature(
    model: &LognormalModel,
    theta: f64,
    spec: &QuadratureSpec,
) -> Result<f64> {
    Ok(log_laplace_quadrature(model, theta, spec)?.exp())
}

/// Gauss-Hermite first; when doubling does not settle (small `theta` with a
/// wide covariance puts a cliff inside the Gaussian bulk) the adaptive scheme
/// with the same centering is used.
pub fn log_laplace_reference(
    model: &LognormalModel,
    theta: f64,
    spec: &QuadratureSpec,
) -> Result<f64> {
    match log_laplace_quadrature(model, theta, spec) {
        Err(Error::NonConvergent(_)) if spec.scheme == Scheme::GaussHermite => {
            let adaptive = QuadratureSpec {
                scheme: Scheme::Adaptive,
                ..*spec
            };
            log_laplace_quadrature(model, theta, &adaptive)
        }
        other => other,
    }
}

fn log_sigmoid(v: f64) -> f64 {
    if v > 0.0 {
        -(-v).exp().ln_1p()
    } else {
        v - v.exp().ln_1p()
    }
}

/// Density of `S = exp(X_1) + exp(X_2)` at `x`.
///
/// Uses `s = x * sigmoid(v)`, which turns the convolution over `(0, x)` into
///
/// ```text
/// f(x) = (1/x) * integral over v of phi_2(log x + log sigmoid(v), log x + log sigmoid(-v))
/// ```
///
/// with `phi_2` the bivariate normal density. The integration range is grown
/// until the tails vanish, and the result must be stable under doubling it.
pub fn density_convolution(model: &LognormalModel, x: f64, spec: &QuadratureSpec) -> Result<f64> {
    if model.dim() > 2 {
        return Err(Error::DimensionTooLarge(format!(
            "convolution oracle needs n = 2, got {}",
            model.dim()
        )));
    }
    if model.dim() < 2 {
        return Err(Error::PreconditionViolation(
            "convolution oracle needs n = 2".into(),
        ));
    }
    spec.validate(2)?;
    if !(x > 0.0) {
        return Ok(0.0);
    }
    let d = model.precision();
    let mu = model.mu();
    let log_norm = -(2.0 * std::f64::consts::PI).ln() - 0.5 * model.log_det_sigma();
    let lx = x.ln();
    let integrand = |v: f64| -> f64 {
        let z0 = lx + log_sigmoid(v) - mu[0];
        let z1 = lx + log_sigmoid(-v) - mu[1];
        let q = d[(0, 0)] * z0 * z0 + 2.0 * d[(0, 1)] * z0 * z1 + d[(1, 1)] * z1 * z1;
        (log_norm - 0.5 * q).exp() / x
    };
    let peak = (-200..=200)
        .map(|k| integrand(k as f64 * 0.25))
        .fold(0.0f64, f64::max);
    let mut half = 4.0;
    while integrand(half).max(integrand(-half)) > 1e-20 * peak {
        half *= 2.0;
        if half > 1e6 {
            return Err(Error::NonConvergent(
                "convolution integrand tails do not vanish".into(),
            ));
        }
    }
    let abs_tol = 1e-300;
    let (narrow, _) = adaptive_gk(|v| Ok(integrand(v)), -half, half, 1e-13, abs_tol)?;
    let (wide, _) = adaptive_gk(
        |v| Ok(integrand(v)),
        -2.0 * half,
        2.0 * half,
        1e-13,
        abs_tol,
    )?;
    if (narrow - wide).abs() > REL_TOL * wide.abs() {
        return Err(Error::NonConvergent(format!(
            "convolution value moved from {narrow:e} to {wide:e} when the range doubled"
        )));
    }
    Ok(wide)
}
