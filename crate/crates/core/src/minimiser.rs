//! Minimiser `x*` of `h(x) = theta * sum exp(mu + x) + x' D x / 2`.
//!
//! The stationarity system is `theta * exp(mu + x) + D x = 0`. The main solver
//! is a damped Newton iteration; a componentwise Lambert W fixed point is used
//! as a fallback and as an independent check.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::asymptotic::{evaluate, expand};
use crate::model::LognormalModel;
use crate::special::lambert_w0;
use crate::{Error, Result};

/// Largest exponent accepted before reporting [`Error::Overflow`].
pub const EXP_GUARD: f64 = 700.0;
pub const MAX_NEWTON_ITERATIONS: usize = 200;
const MAX_FIXED_POINT_ITERATIONS: usize = 100_000;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 80;
const POLISH_STEPS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Newton,
    FixedPoint,
    Hybrid,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Newton => "newton",
            Method::FixedPoint => "fixed_point",
            Method::Hybrid => "hybrid",
        }
    }
}

#[derive(Debug, Clone)]
pub struct MinimiserResult {
    pub x_star: DVector<f64>,
    /// `theta * exp(mu + x*)`, the diagonal of `Lambda`.
    pub lambda_diag: DVector<f64>,
    pub residual_inf: f64,
    pub iterations: usize,
    pub method: Method,
    /// `h` at the start point and after every accepted step.
    pub trace: Vec<f64>,
}

fn check_exponents(model: &LognormalModel, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "x has length {}, model has dimension {}",
            x.len(),
            model.dim()
        )));
    }
    let e = model.mu() + x;
    if let Some(i) = e.iter().position(|v| !(*v <= EXP_GUARD)) {
        return Err(Error::Overflow(format!(
            "mu_{i} + x_{i} = {} exceeds {EXP_GUARD}",
            e[i]
        )));
    }
    Ok(e)
}

/// `theta * exp(mu + x)`.
fn exp_term(model: &LognormalModel, theta: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(check_exponents(model, x)?.map(|v| theta * v.exp()))
}

pub fn h_value(model: &LognormalModel, theta: f64, x: &DVector<f64>) -> Result<f64> {
    let lam = exp_term(model, theta, x)?;
    Ok(lam.sum() + 0.5 * x.dot(&(model.precision() * x)))
}

pub fn grad_h(model: &LognormalModel, theta: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(exp_term(model, theta, x)? + model.precision() * x)
}

pub fn hessian_h(model: &LognormalModel, theta: f64, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let lam = exp_term(model, theta, x)?;
    Ok(model.precision() + DMatrix::from_diagonal(&lam))
}

/// Residual tolerance `1e-8 * max(1, max_i lambda_i)`.
pub fn residual_tolerance(lambda: &DVector<f64>) -> f64 {
    1e-8 * lambda.max().max(1.0)
}

/// Start point used when no seed is given: the truncated expansion for
/// `theta > e^e` when it is available and finite, zero otherwise.
pub fn default_seed(model: &LognormalModel, theta: f64) -> DVector<f64> {
    let zero = DVector::zeros(model.dim());
    if !(theta > std::f64::consts::E.exp()) {
        return zero;
    }
    let Ok(expansion) = expand(model) else {
        return zero;
    };
    match evaluate(&expansion, model, theta) {
        Ok(x) if check_exponents(model, &x).is_ok() => x,
        _ => zero,
    }
}

pub fn minimise_h(
    model: &LognormalModel,
    theta: f64,
    seed: Option<&DVector<f64>>,
) -> Result<MinimiserResult> {
    if !(theta >= 0.0) || theta.is_infinite() {
        return Err(Error::DomainError(format!(
            "theta must be finite and >= 0, got {theta}"
        )));
    }
    if theta == 0.0 {
        let x = DVector::zeros(model.dim());
        return Ok(MinimiserResult {
            lambda_diag: x.clone(),
            x_star: x,
            residual_inf: 0.0,
            iterations: 0,
            method: Method::Newton,
            trace: vec![0.0],
        });
    }
    let start = match seed {
        Some(s) => s.clone(),
        None => default_seed(model, theta),
    };
    match newton(model, theta, start) {
        Err(Error::NoConvergence(_)) => {
            let mut res = fixed_point(model, theta, &DVector::zeros(model.dim()))?;
            res.iterations += MAX_NEWTON_ITERATIONS;
            res.method = Method::Hybrid;
            Ok(res)
        }
        other => other,
    }
}

fn newton(model: &LognormalModel, theta: f64, mut x: DVector<f64>) -> Result<MinimiserResult> {
    let d = model.precision();
    let mut f = h_value(model, theta, &x)?;
    let mut trace = vec![f];
    for it in 0..MAX_NEWTON_ITERATIONS {
        let lam = exp_term(model, theta, &x)?;
        let g = &lam + d * &x;
        let r = g.amax();
        if r <= residual_tolerance(&lam) {
            let (x, lam, r, extra) = polish(model, theta, x, lam, r);
            return Ok(MinimiserResult {
                x_star: x,
                lambda_diag: lam,
                residual_inf: r,
                iterations: it + extra,
                method: Method::Newton,
                trace,
            });
        }
        let hess = d + DMatrix::from_diagonal(&lam);
        let chol = Cholesky::new(hess)
            .ok_or_else(|| Error::NoConvergence("Hessian lost positive definiteness".into()))?;
        let p = -chol.solve(&g);
        let slope = g.dot(&p);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let xt = &x + &p * t;
            if let Ok(ft) = h_value(model, theta, &xt) {
                if ft <= f + ARMIJO * t * slope {
                    accepted = Some((xt, ft));
                    break;
                }
                // Near the optimum h is flat to rounding; accept on the gradient.
                if ft <= f && grad_h(model, theta, &xt)?.amax() < r {
                    accepted = Some((xt, ft));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xt, ft)) = accepted else {
            return Err(Error::NoConvergence(format!(
                "line search failed at iteration {it} with residual {r:.3e}"
            )));
        };
        x = xt;
        f = ft;
        trace.push(f);
    }
    Err(Error::NoConvergence(format!(
        "Newton did not converge in {MAX_NEWTON_ITERATIONS} iterations"
    )))
}

/// A few undamped Newton steps past the tolerance, kept while the residual drops.
fn polish(
    model: &LognormalModel,
    theta: f64,
    mut x: DVector<f64>,
    mut lam: DVector<f64>,
    mut r: f64,
) -> (DVector<f64>, DVector<f64>, f64, usize) {
    let d = model.precision();
    let mut steps = 0;
    for _ in 0..POLISH_STEPS {
        let g = &lam + d * &x;
        let Some(chol) = Cholesky::new(d + DMatrix::from_diagonal(&lam)) else {
            break;
        };
        let xt = &x - chol.solve(&g);
        let Ok(lt) = exp_term(model, theta, &xt) else {
            break;
        };
        let rt = (&lt + d * &xt).amax();
        if !(rt < r) {
            break;
        }
        x = xt;
        lam = lt;
        r = rt;
        steps += 1;
    }
    (x, lam, r, steps)
}

/// One Jacobi sweep of the Lambert W fixed point. With `A = D - diag(D)` and
/// `s_i = A_i. x / D_ii`,
///
/// ```text
/// x'_i = -W(theta exp(mu_i) / D_ii * exp(-s_i)) - s_i
/// ```
pub fn fixed_point_step(
    model: &LognormalModel,
    theta: f64,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    if !(theta > 0.0) {
        return Err(Error::DomainError(format!(
            "fixed point needs theta > 0, got {theta}"
        )));
    }
    check_exponents(model, x)?;
    let d = model.precision();
    let n = model.dim();
    let dx = d * x;
    let mut out = DVector::zeros(n);
    for i in 0..n {
        let dii = d[(i, i)];
        let s = (dx[i] - dii * x[i]) / dii;
        let log_arg = theta.ln() + model.mu()[i] - dii.ln() - s;
        if log_arg > EXP_GUARD {
            return Err(Error::Overflow(format!(
                "Lambert W argument exp({log_arg:.1}) in coordinate {i}"
            )));
        }
        out[i] = -lambert_w0(log_arg.exp())? - s;
    }
    Ok(out)
}

/// Iterates [`fixed_point_step`] until successive iterates agree to `1e-12`.
pub fn fixed_point(
    model: &LognormalModel,
    theta: f64,
    start: &DVector<f64>,
) -> Result<MinimiserResult> {
    let mut x = start.clone();
    let mut trace = vec![h_value(model, theta, &x)?];
    for it in 1..=MAX_FIXED_POINT_ITERATIONS {
        let next = fixed_point_step(model, theta, &x)?;
        let change = (&next - &x).amax();
        x = next;
        trace.push(h_value(model, theta, &x)?);
        if change <= 1e-12 * x.amax().max(1.0) {
            let lam = exp_term(model, theta, &x)?;
            let r = (&lam + model.precision() * &x).amax();
            if r > residual_tolerance(&lam) {
                return Err(Error::NoConvergence(format!(
                    "fixed point stalled with residual {r:.3e}"
                )));
            }
            return Ok(MinimiserResult {
                x_star: x,
                lambda_diag: lam,
                residual_inf: r,
                iterations: it,
                method: Method::FixedPoint,
                trace,
            });
        }
    }
    Err(Error::NoConvergence(format!(
        "fixed point did not converge in {MAX_FIXED_POINT_ITERATIONS} iterations"
    )))
}
