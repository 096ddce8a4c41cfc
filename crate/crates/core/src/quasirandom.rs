//! Sobol low-discrepancy points (unscrambled, Gray-code order) and their
//! image under `u -> chol * Phi^{-1}(u)`.
//!
//! Index 0 (the origin) is never emitted; `sobol_points(d, r)` returns the
//! sequence points with indices `1..=r`.

use nalgebra::DMatrix;

use crate::model::LognormalModel;
use crate::sobol_table::DIRECTION_TABLE;
use crate::special::inv_norm_cdf;
use crate::{Error, Result};

pub const MAX_DIM: usize = 1 + DIRECTION_TABLE.len();
const BITS: usize = 32;
const SCALE: f64 = 1.0 / 4_294_967_296.0;

fn direction_numbers(dim: usize) -> Vec<[u32; BITS]> {
    let mut out = Vec::with_capacity(dim);
    let mut first = [0u32; BITS];
    for (k, v) in first.iter_mut().enumerate() {
        *v = 1 << (BITS - 1 - k);
    }
    out.push(first);
    for &(s, a, init) in DIRECTION_TABLE.iter().take(dim.saturating_sub(1)) {
        let s = s as usize;
        let mut m = [0u32; BITS];
        m[..s].copy_from_slice(init);
        for i in s..BITS {
            let mut next = m[i - s] ^ (m[i - s] << s);
            for k in 1..s {
                if (a >> (s - 1 - k)) & 1 == 1 {
                    next ^= m[i - k] << k;
                }
            }
            m[i] = next;
        }
        let mut v = [0u32; BITS];
        for (i, vi) in v.iter_mut().enumerate() {
            *vi = m[i] << (BITS - 1 - i);
        }
        out.push(v);
    }
    out
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::DimensionUnsupported(format!(
            "Sobol dimension must be in 1..={MAX_DIM}, got {dim}"
        )));
    }
    Ok(())
}

/// Sequential generator. `index` is the index of the next point emitted.
#[derive(Debug, Clone)]
pub struct SobolStream {
    dim: usize,
    index: u64,
    direction: Vec<[u32; BITS]>,
    state: Vec<u32>,
}

impl SobolStream {
    /// Stream positioned at index 1.
    pub fn new(dim: usize) -> Result<Self> {
        let mut s = Self::raw(dim)?;
        s.skip_to(1)?;
        Ok(s)
    }

    /// Stream positioned at index 0, the origin. Used for net-property checks.
    pub fn raw(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            dim,
            index: 0,
            direction: direction_numbers(dim),
            state: vec![0; dim],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    /// Jumps to an arbitrary index using its Gray code.
    pub fn skip_to(&mut self, index: u64) -> Result<()> {
        if index >= 1 << BITS {
            return Err(Error::DimensionUnsupported(format!(
                "Sobol index {index} exceeds 2^{BITS}"
            )));
        }
        let gray = index ^ (index >> 1);
        for (state, v) in self.state.iter_mut().zip(&self.direction) {
            *state = (0..BITS)
                .filter(|b| (gray >> b) & 1 == 1)
                .fold(0, |acc, b| acc ^ v[b]);
        }
        self.index = index;
        Ok(())
    }

    /// Writes the current point into `out` and advances.
    pub fn next_into(&mut self, out: &mut [f64]) {
        for (o, s) in out.iter_mut().zip(&self.state) {
            *o = *s as f64 * SCALE;
        }
        let c = self.index.trailing_ones() as usize;
        for (s, v) in self.state.iter_mut().zip(&self.direction) {
            *s ^= v[c];
        }
        self.index += 1;
    }
}

pub fn sobol_points(dim: usize, count: usize) -> Result<DMatrix<f64>> {
    let mut stream = SobolStream::new(dim)?;
    sobol_block(&mut stream, count)
}

fn sobol_block(stream: &mut SobolStream, count: usize) -> Result<DMatrix<f64>> {
    let dim = stream.dim();
    let mut out = DMatrix::zeros(count, dim);
    let mut row = vec![0.0; dim];
    for r in 0..count {
        stream.next_into(&mut row);
        for (j, v) in row.iter().enumerate() {
            out[(r, j)] = *v;
        }
    }
    Ok(out)
}

/// Rows `start..start + count` (1-based sequence indices) of
/// `chol * Phi^{-1}(u_r)`; blocks concatenate to the full point set.
pub fn gaussian_qmc_block(
    model: &LognormalModel,
    start: u64,
    count: usize,
) -> Result<DMatrix<f64>> {
    if start == 0 {
        return Err(Error::PreconditionViolation(
            "Sobol index 0 is never used".into(),
        ));
    }
    let mut stream = SobolStream::raw(model.dim())?;
    stream.skip_to(start)?;
    let u = sobol_block(&mut stream, count)?;
    let mut z = u;
    for v in z.iter_mut() {
        *v = inv_norm_cdf(*v)?;
    }
    Ok(z * model.chol().transpose())
}

pub fn gaussian_qmc_points(model: &LognormalModel, count: usize) -> Result<DMatrix<f64>> {
    gaussian_qmc_block(model, 1, count)
}
