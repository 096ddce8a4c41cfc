//! Scalar special functions: principal-branch Lambert W and the standard
//! normal distribution.

use std::f64::consts::{E, FRAC_1_SQRT_2};

use crate::{Error, Result};

const MAX_HALLEY_STEPS: usize = 64;

/// Principal branch `W_0(z)` on the nonnegative real axis.
///
/// Solves `w exp(w) = z` by Halley iteration.
pub fn lambert_w0(z: f64) -> Result<f64> {
    if z.is_nan() || z < 0.0 {
        return Err(Error::DomainError(format!(
            "lambert_w0 needs z >= 0, got {z}"
        )));
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    if z.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let mut w = if z < 1.0 {
        z
    } else if z < E {
        // Both neighbouring guesses equal 1 at the ends of this interval.
        1.0
    } else {
        let l = z.ln();
        l - l.ln()
    };
    for _ in 0..MAX_HALLEY_STEPS {
        let ew = w.exp();
        let f = w * ew - z;
        let wp1 = w + 1.0;
        let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        let next = w - step;
        if (next - w).abs() <= 4.0 * f64::EPSILON * next.abs().max(f64::MIN_POSITIVE) {
            return Ok(next);
        }
        w = next;
    }
    Ok(w)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF via `erfc`, accurate in both tails.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

// Acklam's rational approximation; relative error below 1.2e-9 before polishing.
const A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];
const P_LOW: f64 = 0.02425;

/// Lower half only: `p <= 0.5`.
fn lower_quantile(p: f64) -> f64 {
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    // One Halley step against the erfc-based CDF.
    let density = norm_pdf(x);
    if density == 0.0 {
        return x;
    }
    let u = (norm_cdf(x) - p) / density;
    x - u / (1.0 + 0.5 * x * u)
}

/// Inverse standard normal CDF `Phi^{-1}(p)` for `0 < p < 1`.
///
/// Exactly odd about `p = 1/2`: the upper half is computed as `-Phi^{-1}(1-p)`,
/// and `1 - p` is exact there.
pub fn inv_norm_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::DomainError(format!(
            "inv_norm_cdf needs 0 < p < 1, got {p}"
        )));
    }
    Ok(if p == 0.5 {
        0.0
    } else if p < 0.5 {
        lower_quantile(p)
    } else {
        -lower_quantile(1.0 - p)
    })
}

/// `sqrt(2 pi)`.
pub const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Lognormal density of `exp(N(m, s^2))` at `y`.
pub fn lognormal_pdf(y: f64, m: f64, s: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    let z = (y.ln() - m) / s;
    (-0.5 * z * z).exp() / (y * s * SQRT_2PI)
}
