//! Large-`theta` expansion of the minimiser:
//!
//! ```text
//! x*_i = sum_j beta_ij log_j(theta) - mu_i + c_i + o(1)
//! ```
//!
//! where `log_1 = log` and `log_j = log o log_{j-1}`. The coefficient matrix
//! is built column by column from a sequence of constrained quadratic
//! programs; each column refines a partition of the indices into
//!
//! - `plus`: coordinates whose exponential term balances the linear term,
//! - `star`: coordinates that join `plus` at the next step,
//! - `zero`: undecided coordinates,
//! - `minus`: coordinates whose exponential term vanishes, so `D_i. x* -> 0`.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::model::LognormalModel;
use crate::qp::{solve_qp, QpProblem};
use crate::{Error, Result, CLASSIFY_TOL};

/// Index partition after one step of the recursion (0-based indices).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Partition {
    pub plus: Vec<usize>,
    pub star: Vec<usize>,
    pub zero: Vec<usize>,
    pub minus: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct AsymptoticExpansion {
    /// Column `j` (0-based) multiplies `log_{j+1}(theta)`.
    pub beta: DMatrix<f64>,
    pub c: DVector<f64>,
    pub plus_set: Vec<usize>,
    pub minus_set: Vec<usize>,
    /// Indices with `beta_i1 < -1`.
    pub minus1_set: Vec<usize>,
    /// Indices that enter `plus` directly after the first step.
    pub star1_set: Vec<usize>,
    /// Order `k_i` (1-based) of the iterated logarithm carrying the last
    /// nonzero coefficient; `None` on `minus1_set`.
    pub log_order: Vec<Option<usize>>,
    /// For `i` in `plus_set`: first column (1-based) where `D_i. beta` is negative.
    pub first_negative: Vec<Option<usize>>,
    /// `C = -D_{--}^{-1} D_{-+}`, rows follow `minus_set`, columns `plus_set`.
    pub coupling: DMatrix<f64>,
    /// Partition after each executed step, starting with step 1.
    pub steps: Vec<Partition>,
}

impl AsymptoticExpansion {
    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// Number of leading columns of `beta` that contain a nonzero entry.
    pub fn depth(&self) -> usize {
        (0..self.beta.ncols())
            .rev()
            .find(|&j| self.beta.column(j).iter().any(|v| *v != 0.0))
            .map_or(0, |j| j + 1)
    }

    /// `c - mu`, the constant column of the printed `(beta | c - mu)` layout.
    pub fn c_minus_mu(&self, model: &LognormalModel) -> DVector<f64> {
        &self.c - model.mu()
    }
}

fn row_tol(d: &DMatrix<f64>) -> f64 {
    CLASSIFY_TOL * d.amax()
}

fn sub_matrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| m[(rows[a], cols[b])])
}

fn sub_vector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |a, _| v[idx[a]])
}

fn sorted_union(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = a.iter().chain(b).copied().collect();
    out.sort_unstable();
    out
}

/// Runs the recursive construction for an arbitrary valid model.
pub fn expand(model: &LognormalModel) -> Result<AsymptoticExpansion> {
    let d = model.precision();
    let n = model.dim();
    let tol_row = row_tol(d);
    let mut beta = DMatrix::zeros(n, n);
    let mut log_order = vec![None; n];

    let first = solve_qp(&QpProblem::all_below(d.clone(), -1.0))?;
    beta.set_column(0, &first.w);
    let mut part = Partition::default();
    for i in 0..n {
        let (w, r) = (first.w[i], first.residuals[i]);
        if w < -1.0 - CLASSIFY_TOL {
            part.minus.push(i);
        } else if r < -tol_row {
            part.star.push(i);
        } else if r <= tol_row {
            part.zero.push(i);
        } else {
            return Err(Error::PartitionFailure(format!(
                "step 1: bound on {i} is tight but D_i.beta = {r:.3e} > 0"
            )));
        }
    }
    if part.star.is_empty() {
        return Err(Error::PartitionFailure(
            "step 1 produced no index with D_i.beta < 0".into(),
        ));
    }
    let minus1_set = part.minus.clone();
    let star1_set = part.star.clone();
    let mut steps = vec![part.clone()];

    for k in 1..n {
        if part.zero.is_empty() && part.star.is_empty() {
            break;
        }
        let problem = QpProblem {
            d: d.clone(),
            fixed: part
                .plus
                .iter()
                .map(|&i| (i, 0.0))
                .chain(part.star.iter().map(|&i| (i, 1.0)))
                .collect(),
            upper: part.zero.iter().map(|&i| (i, 0.0)).collect(),
            stationary: part.minus.clone(),
        };
        let sol = solve_qp(&problem)?;
        beta.set_column(k, &sol.w);
        for &i in &part.star {
            log_order[i] = Some(k + 1);
        }
        let mut next = Partition {
            plus: sorted_union(&part.plus, &part.star),
            minus: part.minus.clone(),
            ..Partition::default()
        };
        for &i in &part.zero {
            let (w, r) = (sol.w[i], sol.residuals[i]);
            if w < -CLASSIFY_TOL {
                next.minus.push(i);
                log_order[i] = Some(k + 1);
            } else if r < -tol_row {
                next.star.push(i);
            } else if r <= tol_row {
                next.zero.push(i);
            } else {
                return Err(Error::PartitionFailure(format!(
                    "step {}: bound on {i} is tight but D_i.beta = {r:.3e} > 0",
                    k + 1
                )));
            }
        }
        if !part.zero.is_empty() && next.star.is_empty() {
            return Err(Error::PartitionFailure(format!(
                "step {}: no undecided index acquired D_i.beta < 0",
                k + 1
            )));
        }
        next.minus.sort_unstable();
        part = next;
        steps.push(part.clone());
    }
    if !part.zero.is_empty() || !part.star.is_empty() {
        return Err(Error::PartitionFailure(format!(
            "{} undecided indices remain after {n} steps",
            part.zero.len() + part.star.len()
        )));
    }

    let plus_set = part.plus;
    let minus_set = part.minus;
    let d_beta = d * &beta;
    let mut c = DVector::zeros(n);
    let mut first_negative = vec![None; n];
    for &i in &plus_set {
        let l = (0..n).find(|&j| d_beta[(i, j)] < -tol_row).ok_or_else(|| {
            Error::PartitionFailure(format!("row {i} of D beta has no negative entry"))
        })?;
        first_negative[i] = Some(l + 1);
        c[i] = (-d_beta[(i, l)]).ln();
    }
    let coupling = if minus_set.is_empty() {
        DMatrix::zeros(0, plus_set.len())
    } else {
        let d_mm = sub_matrix(d, &minus_set, &minus_set);
        let d_mp = sub_matrix(d, &minus_set, &plus_set);
        let chol = Cholesky::new(d_mm)
            .ok_or_else(|| Error::SingularSubmatrix("D restricted to the minus set".into()))?;
        let coupling = -chol.solve(&d_mp);
        let c_plus = sub_vector(&c, &plus_set) - sub_vector(model.mu(), &plus_set);
        let c_minus = &coupling * c_plus;
        for (a, &i) in minus_set.iter().enumerate() {
            c[i] = c_minus[a] + model.mu()[i];
        }
        coupling
    };

    Ok(AsymptoticExpansion {
        beta,
        c,
        plus_set,
        minus_set,
        minus1_set,
        star1_set,
        log_order,
        first_negative,
        coupling,
        steps,
    })
}

/// Closed form when every row sum of `D` is positive:
/// `x*_i = -log theta + log log theta - mu_i + log a_i + o(1)`.
pub fn all_positive_expansion(model: &LognormalModel) -> Result<AsymptoticExpansion> {
    let rows = model.row_sums();
    if !rows.all_positive() {
        return Err(Error::PreconditionViolation(
            "all_positive_expansion needs every row sum of D to be positive".into(),
        ));
    }
    let n = model.dim();
    let mut beta = DMatrix::zeros(n, n);
    beta.column_mut(0).fill(-1.0);
    if n > 1 {
        beta.column_mut(1).fill(1.0);
    } else {
        // n = 1 keeps the log log theta term even though beta has one column.
        return Err(Error::PreconditionViolation(
            "the expansion needs at least two columns; use the Lambert W form for n = 1".into(),
        ));
    }
    let all: Vec<usize> = (0..n).collect();
    Ok(AsymptoticExpansion {
        beta,
        c: rows.values.map(f64::ln),
        plus_set: all.clone(),
        minus_set: vec![],
        minus1_set: vec![],
        star1_set: all.clone(),
        log_order: vec![Some(2); n],
        first_negative: vec![Some(1); n],
        coupling: DMatrix::zeros(0, n),
        steps: vec![
            Partition {
                star: all.clone(),
                ..Partition::default()
            },
            Partition {
                plus: all,
                ..Partition::default()
            },
        ],
    })
}

/// Schur complement of `D` onto `star1` and its row sums.
///
/// Returns `(D_bar, a_bar)` with
/// `D_bar = D_{**} - D_{*~} D_{~~}^{-1} D_{~*}` and `a_bar = D_bar 1`.
pub fn schur_constants(
    model: &LognormalModel,
    star1: &[usize],
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let d = model.precision();
    let n = model.dim();
    if star1.iter().any(|&i| i >= n) {
        return Err(Error::DimensionMismatch(
            "star set index out of range".into(),
        ));
    }
    let rest: Vec<usize> = (0..n).filter(|i| !star1.contains(i)).collect();
    let d_ss = sub_matrix(d, star1, star1);
    let d_bar = if rest.is_empty() {
        d_ss
    } else {
        let d_rr = sub_matrix(d, &rest, &rest);
        let d_rs = sub_matrix(d, &rest, star1);
        let chol = Cholesky::new(d_rr)
            .ok_or_else(|| Error::SingularSubmatrix("D restricted to the complement".into()))?;
        d_ss - d_rs.transpose() * chol.solve(&d_rs)
    };
    let a_bar = d_bar.column_sum();
    Ok((d_bar, a_bar))
}

/// `[log theta, log log theta, ...]` up to `depth` terms, each required positive.
pub fn iterated_logs(theta: f64, depth: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(depth);
    let mut current = theta;
    for j in 1..=depth {
        if !(current > 0.0) {
            return Err(Error::ThetaTooSmall(format!(
                "log_{j}({theta}) is undefined"
            )));
        }
        current = current.ln();
        if !(current > 0.0) {
            return Err(Error::ThetaTooSmall(format!(
                "log_{j}({theta}) = {current} is not positive"
            )));
        }
        out.push(current);
    }
    Ok(out)
}

/// Truncated expansion `beta . logs - mu + c` at `theta` (no remainder).
pub fn evaluate(
    expansion: &AsymptoticExpansion,
    model: &LognormalModel,
    theta: f64,
) -> Result<DVector<f64>> {
    let depth = expansion.depth();
    let logs = iterated_logs(theta, depth)?;
    let mut x = &expansion.c - model.mu();
    for (j, l) in logs.iter().enumerate() {
        x += expansion.beta.column(j) * *l;
    }
    Ok(x)
}
