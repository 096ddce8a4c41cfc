//! Active-set solver for `min w' D w` under the constraint families that
//! appear in the recursive construction of the asymptotic expansion:
//! pinned coordinates, upper bounds on single coordinates and "stationary"
//! rows `D_i. w = 0`. The same engine also solves the minimum-variance
//! portfolio problem over the probability simplex.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::model::LognormalModel;
use crate::{Error, Result, CLASSIFY_TOL};

/// A quadratic subproblem `min w' D w` subject to
///
/// - `w_i = v` for `(i, v)` in `fixed`,
/// - `w_i <= b` for `(i, b)` in `upper`,
/// - `D_i. w = 0` for `i` in `stationary`.
///
/// The three index sets must be pairwise disjoint; indices in none of them
/// are free.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub d: DMatrix<f64>,
    pub fixed: Vec<(usize, f64)>,
    pub upper: Vec<(usize, f64)>,
    pub stationary: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub w: DVector<f64>,
    /// `active[i]` is true when `i` carries an upper bound that is tight.
    pub active: Vec<bool>,
    /// `D_i. w` for every row.
    pub residuals: DVector<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
enum Bound {
    Upper(f64),
    Lower(f64),
}

impl Bound {
    fn value(self) -> f64 {
        match self {
            Bound::Upper(b) | Bound::Lower(b) => b,
        }
    }

    fn is_tight(self, w: f64) -> bool {
        let b = self.value();
        (w - b).abs() <= CLASSIFY_TOL * b.abs().max(1.0)
    }

    fn is_satisfied(self, w: f64) -> bool {
        let slack = CLASSIFY_TOL * self.value().abs().max(1.0);
        match self {
            Bound::Upper(b) => w <= b + slack,
            Bound::Lower(b) => w >= b - slack,
        }
    }
}

/// Primal active-set method for `min w' Q w / 2` with pinned coordinates,
/// single-coordinate bounds and general equality rows `E w = e`.
struct ActiveSet<'a> {
    q: &'a DMatrix<f64>,
    pinned: Vec<Option<f64>>,
    bounds: Vec<Option<Bound>>,
    eq_rows: DMatrix<f64>,
    eq_rhs: DVector<f64>,
}

struct EqpSolution {
    w: DVector<f64>,
    lambda: DVector<f64>,
}

impl ActiveSet<'_> {
    fn n(&self) -> usize {
        self.q.nrows()
    }

    fn eq_count(&self) -> usize {
        self.eq_rows.nrows()
    }

    fn max_iterations(&self) -> usize {
        100 * (self.n() + 1)
    }

    /// Value forced on coordinate `i` by a pin or an active bound.
    fn forced(&self, i: usize, working: &[bool]) -> Option<f64> {
        self.pinned[i].or_else(|| {
            if working[i] {
                self.bounds[i].map(Bound::value)
            } else {
                None
            }
        })
    }

    /// Minimises over the free coordinates with everything in the working set
    /// held at its bound. Range-space solve through two Cholesky factors.
    fn solve_equality(&self, working: &[bool]) -> Result<EqpSolution> {
        let n = self.n();
        let m = self.eq_count();
        let mut w = DVector::zeros(n);
        let mut free = Vec::with_capacity(n);
        for i in 0..n {
            match self.forced(i, working) {
                Some(v) => w[i] = v,
                None => free.push(i),
            }
        }
        // Residual of the equality rows carried by the forced coordinates.
        let mut r = self.eq_rhs.clone();
        for i in 0..n {
            if self.forced(i, working).is_some() {
                for k in 0..m {
                    r[k] -= self.eq_rows[(k, i)] * w[i];
                }
            }
        }
        if free.is_empty() {
            if r.amax() > CLASSIFY_TOL * self.eq_rhs.amax().max(1.0) {
                return Err(Error::InfeasibleConstraints(
                    "equality rows cannot hold with every coordinate fixed".into(),
                ));
            }
            return Ok(EqpSolution {
                w,
                lambda: DVector::zeros(m),
            });
        }
        let nf = free.len();
        let q_ff = DMatrix::from_fn(nf, nf, |a, b| self.q[(free[a], free[b])]);
        let lin = DVector::from_fn(nf, |a, _| {
            (0..n)
                .filter(|j| self.forced(*j, working).is_some())
                .map(|j| self.q[(free[a], j)] * w[j])
                .sum::<f64>()
        });
        let chol: Cholesky<f64, Dyn> = Cholesky::new(q_ff).ok_or_else(|| {
            Error::PreconditionViolation("objective is not positive definite".into())
        })?;
        let t = chol.solve(&lin);
        let (w_free, lambda) = if m == 0 {
            (-t, DVector::zeros(0))
        } else {
            let e_f = DMatrix::from_fn(m, nf, |k, a| self.eq_rows[(k, free[a])]);
            let y = chol.solve(&e_f.transpose());
            let s = &e_f * &y;
            let s_chol = Cholesky::new(s).ok_or_else(|| {
                Error::InfeasibleConstraints(
                    "equality rows are linearly dependent on the free set".into(),
                )
            })?;
            let lambda = -s_chol.solve(&(&r + &e_f * &t));
            (-(&t + &y * &lambda), lambda)
        };
        for (a, &i) in free.iter().enumerate() {
            w[i] = w_free[a];
        }
        Ok(EqpSolution { w, lambda })
    }

    fn check_feasible(&self, w: &DVector<f64>) -> Result<()> {
        for i in 0..self.n() {
            if let Some(v) = self.pinned[i] {
                if (w[i] - v).abs() > CLASSIFY_TOL * v.abs().max(1.0) {
                    return Err(Error::InfeasibleConstraints(format!(
                        "start violates pin on {i}"
                    )));
                }
            }
            if let Some(b) = self.bounds[i] {
                if !b.is_satisfied(w[i]) {
                    return Err(Error::InfeasibleConstraints(format!(
                        "start violates bound on {i}"
                    )));
                }
            }
        }
        if self.eq_count() > 0 {
            let resid = &self.eq_rows * w - &self.eq_rhs;
            let scale = self.eq_rows.amax() * w.amax().max(1.0);
            if resid.amax() > CLASSIFY_TOL * scale {
                return Err(Error::InfeasibleConstraints(
                    "start violates equality rows".into(),
                ));
            }
        }
        Ok(())
    }

    /// Runs the active-set iteration from a feasible start.
    fn run(&self, start: DVector<f64>) -> Result<(DVector<f64>, Vec<bool>, usize)> {
        let n = self.n();
        self.check_feasible(&start)?;
        let mut w = start;
        let mut working = vec![false; n];
        for i in 0..n {
            if let Some(v) = self.pinned[i] {
                w[i] = v;
            } else if let Some(b) = self.bounds[i] {
                if b.is_tight(w[i]) {
                    working[i] = true;
                    w[i] = b.value();
                }
            }
        }
        let q_scale = self.q.amax();
        for iter in 0..self.max_iterations() {
            let eqp = self.solve_equality(&working)?;
            let p = &eqp.w - &w;
            let w_scale = w.amax().max(1.0);
            if p.amax() <= 1e-13 * w_scale {
                w = eqp.w;
                let grad = self.q * &w + self.eq_rows.transpose() * &eqp.lambda;
                let threshold = -CLASSIFY_TOL * q_scale * w_scale;
                // Most negative multiplier leaves; smallest index wins ties.
                let mut leaving: Option<(usize, f64)> = None;
                for i in (0..n).filter(|i| working[*i]) {
                    let nu = match self.bounds[i] {
                        Some(Bound::Upper(_)) => -grad[i],
                        Some(Bound::Lower(_)) => grad[i],
                        None => continue,
                    };
                    if nu < threshold && leaving.is_none_or(|(_, best)| nu < best) {
                        leaving = Some((i, nu));
                    }
                }
                match leaving {
                    None => return Ok((w, working, iter + 1)),
                    Some((i, _)) => working[i] = false,
                }
            } else {
                let mut alpha = 1.0;
                let mut blocking = None;
                for i in 0..n {
                    if working[i] || self.pinned[i].is_some() {
                        continue;
                    }
                    let step = match self.bounds[i] {
                        Some(Bound::Upper(b)) if p[i] > 0.0 => (b - w[i]) / p[i],
                        Some(Bound::Lower(b)) if p[i] < 0.0 => (b - w[i]) / p[i],
                        _ => continue,
                    };
                    let step = step.max(0.0);
                    if step < alpha {
                        alpha = step;
                        blocking = Some(i);
                    }
                }
                w += p * alpha;
                if let Some(i) = blocking {
                    working[i] = true;
                    w[i] = self.bounds[i].map(Bound::value).unwrap_or(w[i]);
                }
            }
        }
        Err(Error::MaxIterations(format!(
            "active-set iteration exceeded {} steps",
            self.max_iterations()
        )))
    }
}

impl QpProblem {
    /// Step-1 problem: `w_i <= -1` for every coordinate.
    pub fn all_below(d: DMatrix<f64>, bound: f64) -> Self {
        let n = d.nrows();
        Self {
            d,
            fixed: vec![],
            upper: (0..n).map(|i| (i, bound)).collect(),
            stationary: vec![],
        }
    }

    fn engine(&self) -> Result<ActiveSet<'_>> {
        let n = self.d.nrows();
        if !self.d.is_square() {
            return Err(Error::DimensionMismatch(
                "objective matrix is not square".into(),
            ));
        }
        let mut role = vec![0u8; n];
        let mut pinned = vec![None; n];
        let mut bounds = vec![None; n];
        let mut claim = |i: usize| -> Result<()> {
            if i >= n {
                return Err(Error::DimensionMismatch(format!(
                    "index {i} out of range for n = {n}"
                )));
            }
            if role[i] != 0 {
                return Err(Error::InfeasibleConstraints(format!(
                    "index {i} appears in more than one constraint family"
                )));
            }
            role[i] = 1;
            Ok(())
        };
        for &(i, v) in &self.fixed {
            claim(i)?;
            pinned[i] = Some(v);
        }
        for &(i, b) in &self.upper {
            claim(i)?;
            bounds[i] = Some(Bound::Upper(b));
        }
        for &i in &self.stationary {
            claim(i)?;
        }
        let m = self.stationary.len();
        let eq_rows = DMatrix::from_fn(m, n, |k, j| self.d[(self.stationary[k], j)]);
        Ok(ActiveSet {
            q: &self.d,
            pinned,
            bounds,
            eq_rows,
            eq_rhs: DVector::zeros(m),
        })
    }

    fn finish(&self, w: DVector<f64>, working: Vec<bool>, iterations: usize) -> QpSolution {
        let residuals = &self.d * &w;
        QpSolution {
            w,
            active: working,
            residuals,
            iterations,
        }
    }
}

/// Solves the problem starting from the vertex where every upper bound is
/// tight and the stationary rows hold.
pub fn solve_qp(problem: &QpProblem) -> Result<QpSolution> {
    let engine = problem.engine()?;
    let all_tight = vec![true; problem.d.nrows()];
    let start = engine.solve_equality(&all_tight)?.w;
    let (w, working, iterations) = engine.run(start)?;
    Ok(problem.finish(w, working, iterations))
}

/// Solves the problem from a caller-supplied feasible point.
pub fn solve_qp_from(problem: &QpProblem, start: &DVector<f64>) -> Result<QpSolution> {
    let engine = problem.engine()?;
    if start.len() != problem.d.nrows() {
        return Err(Error::DimensionMismatch(
            "start has the wrong length".into(),
        ));
    }
    let (w, working, iterations) = engine.run(start.clone())?;
    Ok(problem.finish(w, working, iterations))
}

/// Minimum-variance portfolio: `argmin w' Sigma w` over the probability simplex.
pub fn min_variance_portfolio(model: &LognormalModel) -> Result<DVector<f64>> {
    let n = model.dim();
    let engine = ActiveSet {
        q: model.sigma(),
        pinned: vec![None; n],
        bounds: vec![Some(Bound::Lower(0.0)); n],
        eq_rows: DMatrix::from_element(1, n, 1.0),
        eq_rhs: DVector::from_element(1, 1.0),
    };
    let start = DVector::from_element(n, 1.0 / n as f64);
    let (mut w, _, _) = engine.run(start)?;
    w.iter_mut().for_each(|v| *v = v.max(0.0));
    let total = w.sum();
    Ok(w / total)
}
