//! Laplace transform of a sum of dependent lognormal random variables.
//!
//! For `(X_1, ..., X_n) ~ N(mu, Sigma)` and `S = exp(X_1) + ... + exp(X_n)`
//! the transform `L(theta) = E exp(-theta S)` is factorised as
//! `L(theta) = L_tilde(theta) * I(theta)`, where `L_tilde` is a closed-form
//! saddlepoint approximation built from the minimiser `x*` of
//!
//! ```text
//! h(x) = theta * sum_i exp(mu_i + x_i) + x' D x / 2,     D = Sigma^{-1}
//! ```
//!
//! and `I(theta)` is a correction factor close to one that is estimated by
//! importance sampling or quasi-Monte Carlo. The density of `S` is recovered
//! by Gaver-Stehfest inversion.
//!
//! Module map:
//!
//! - [`model`]: problem instance, precision matrix, row sums.
//! - [`special`]: Lambert W and the inverse normal CDF.
//! - [`qp`]: active-set solver for the constrained quadratic subproblems.
//! - [`asymptotic`]: the large-`theta` expansion of `x*`.
//! - [`minimiser`]: Newton and fixed-point solvers for `x*`.
//! - [`quasirandom`]: Sobol points and correlated Gaussian QMC points.
//! - [`transform`]: `L_tilde` and the Monte Carlo / QMC estimators.
//! - [`inversion`]: Gaver-Stehfest inversion and density estimators.
//! - [`oracle`]: slow high-accuracy quadrature used as ground truth.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotic;
mod error;
pub mod inversion;
pub mod minimiser;
pub mod model;
pub mod oracle;
pub mod qp;
pub mod quadrature;
pub mod quasirandom;
mod sobol_table;
pub mod special;
pub mod transform;

pub use error::{Error, Result};
pub use model::LognormalModel;

/// Shared tolerance for discrete decisions (active bounds, sign classes).
///
/// The QP active set and the index partition of the asymptotic expansion
/// both read signs through this value so that they never disagree.
pub const CLASSIFY_TOL: f64 = 1e-9;
