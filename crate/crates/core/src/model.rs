//! The problem instance: mean vector, covariance and the derived precision.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Deserialize;

use crate::{Error, Result};

/// Relative asymmetry that is silently repaired by symmetrising.
const SYMMETRY_TOL: f64 = 1e-12;
/// Allowed `max |D Sigma - I|`, relative to `max |D|`.
const INVERSE_TOL: f64 = 1e-10;
/// Row sums below this (relative to `max |D|`) are flagged as near zero.
const NEAR_ZERO_ROW_SUM: f64 = 1e-9;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    #[serde(default)]
    name: Option<String>,
    mu: Vec<f64>,
    sigma: Vec<Vec<f64>>,
}

/// `(X_1, ..., X_n) ~ N(mu, sigma)` together with the quantities every
/// downstream computation needs.
///
/// Immutable after construction.
#[derive(Debug, Clone)]
pub struct LognormalModel {
    name: Option<String>,
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    precision: DMatrix<f64>,
    chol: DMatrix<f64>,
    row_sums: DVector<f64>,
}

/// Sign class of a precision-matrix row sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSumSign {
    Positive,
    NonPositive,
}

/// Row sums `a_i = sum_j D_ij` with their sign classification.
#[derive(Debug, Clone)]
pub struct RowSums {
    pub values: DVector<f64>,
    pub signs: Vec<RowSumSign>,
    /// `|a_i| <= 1e-9 max|D|`: the sign is kept as computed but is fragile.
    pub near_zero: Vec<bool>,
}

impl RowSums {
    pub fn all_positive(&self) -> bool {
        self.signs.iter().all(|s| *s == RowSumSign::Positive)
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn symmetrised(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "{what} is {}x{}, expected a square matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::ParseError(format!("{what} has non-finite entries")));
    }
    let scale = max_abs(m).max(f64::MIN_POSITIVE);
    let asym = max_abs(&(m - m.transpose()));
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(format!(
            "{what} asymmetry {asym:.3e} exceeds {SYMMETRY_TOL:e} relative"
        )));
    }
    Ok((m + m.transpose()) * 0.5)
}

fn cholesky(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let chol = Cholesky::new(m)
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{what}: Cholesky pivot <= 0")))?;
    if chol.l_dirty().diagonal().iter().any(|p| !(*p > 0.0)) {
        return Err(Error::NotPositiveDefinite(format!(
            "{what}: Cholesky pivot <= 0"
        )));
    }
    Ok(chol)
}

impl LognormalModel {
    /// Builds a model from the mean vector and covariance matrix.
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let sigma = symmetrised(&sigma, "sigma")?;
        check_dims(&mu, &sigma)?;
        let chol_sigma = cholesky(sigma.clone(), "sigma")?;
        let precision = symmetrise_exact(chol_sigma.inverse());
        let chol = chol_sigma.l();
        Self::finish(None, mu, sigma, precision, chol)
    }

    /// Builds a model from the mean vector and the precision matrix `D`.
    ///
    /// `D` is kept exactly as given; the covariance is derived from it. Use
    /// this when the precision matrix is the object with exact entries.
    pub fn from_precision(mu: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        let precision = symmetrised(&precision, "precision")?;
        check_dims(&mu, &precision)?;
        let chol_d = cholesky(precision.clone(), "precision")?;
        let sigma = symmetrise_exact(chol_d.inverse());
        let chol = cholesky(sigma.clone(), "sigma")?.l();
        Self::finish(None, mu, sigma, precision, chol)
    }

    /// Parses a model document `{"mu": [...], "sigma": [[...], ...], "name": "..."}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| Error::ParseError(e.to_string()))?;
        let n = doc.mu.len();
        if n == 0 {
            return Err(Error::ParseError("mu is empty".into()));
        }
        if doc.sigma.len() != n || doc.sigma.iter().any(|row| row.len() != n) {
            return Err(Error::DimensionMismatch(format!(
                "mu has length {n} but sigma is not {n}x{n}"
            )));
        }
        let mu = DVector::from_vec(doc.mu);
        let sigma = DMatrix::from_fn(n, n, |i, j| doc.sigma[i][j]);
        let mut model = Self::new(mu, sigma)?;
        model.name = doc.name;
        Ok(model)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    fn finish(
        name: Option<String>,
        mu: DVector<f64>,
        sigma: DMatrix<f64>,
        precision: DMatrix<f64>,
        chol: DMatrix<f64>,
    ) -> Result<Self> {
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::ParseError("mu has non-finite entries".into()));
        }
        let n = mu.len();
        let d_scale = max_abs(&precision);
        let defect = max_abs(&(&precision * &sigma - DMatrix::identity(n, n)));
        if defect > INVERSE_TOL * d_scale {
            return Err(Error::NotPositiveDefinite(format!(
                "numerically singular: |D Sigma - I| = {defect:.3e}"
            )));
        }
        let row_sums = precision.column_sum();
        if row_sums.iter().all(|a| *a <= 0.0) {
            return Err(Error::NotPositiveDefinite(
                "no positive row sum in the precision matrix".into(),
            ));
        }
        Ok(Self {
            name,
            mu,
            sigma,
            precision,
            chol,
            row_sums,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// `D = Sigma^{-1}`.
    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// Lower-triangular `L` with `L L' = Sigma`.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn row_sums(&self) -> RowSums {
        row_sums(self)
    }

    /// `log det Sigma`.
    pub fn log_det_sigma(&self) -> f64 {
        2.0 * self.chol.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }
}

fn check_dims(mu: &DVector<f64>, m: &DMatrix<f64>) -> Result<()> {
    if mu.is_empty() {
        return Err(Error::DimensionMismatch("empty mean vector".into()));
    }
    if mu.len() != m.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "mu has length {} but the matrix has order {}",
            mu.len(),
            m.nrows()
        )));
    }
    Ok(())
}

fn symmetrise_exact(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Row sums of the precision matrix, classified by sign.
pub fn row_sums(model: &LognormalModel) -> RowSums {
    let values = model.row_sums.clone();
    let scale = max_abs(&model.precision);
    let signs = values
        .iter()
        .map(|a| {
            if *a > 0.0 {
                RowSumSign::Positive
            } else {
                RowSumSign::NonPositive
            }
        })
        .collect();
    let near_zero = values
        .iter()
        .map(|a| a.abs() <= NEAR_ZERO_ROW_SUM * scale)
        .collect();
    RowSums {
        values,
        signs,
        near_zero,
    }
}

/// Parses and validates a model document.
pub fn load_model(text: &str) -> Result<LognormalModel> {
    LognormalModel::from_json(text)
}
