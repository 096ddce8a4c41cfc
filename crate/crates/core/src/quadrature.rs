//! One-dimensional quadrature rules: Gauss-Hermite nodes for standard normal
//! expectations and globally adaptive Gauss-Kronrod (7/15).

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use crate::{Error, Result};

/// Nodes and weights with `E f(Y) ~ sum_i w_i f(y_i)` for `Y ~ N(0, 1)`.
///
/// Nodes are ascending; weights sum to one.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::PreconditionViolation(
            "Gauss-Hermite needs n >= 1".into(),
        ));
    }
    // Roots of the orthonormal Hermite polynomial (weight exp(-t^2)) are the
    // eigenvalues of its Jacobi matrix: zero diagonal, off-diagonal sqrt(k/2).
    // Each is bracketed by Sturm-count bisection and then polished by Newton
    // on the recurrence, which is rescaled to stay finite for large n.
    let m = n.div_ceil(2);
    let mut t = vec![0.0; m];
    let mut log_w = vec![0.0; m];
    let upper = (2.0 * n as f64 + 1.0).sqrt() + 1.0;
    for i in 0..m {
        // i-th largest eigenvalue: exactly n - 1 - i eigenvalues lie below it.
        let below = n - 1 - i;
        let (mut lo, mut hi) = (0.0_f64.min(-upper), upper);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if sturm_count(n, mid) > below {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let mut z = 0.5 * (lo + hi);
        for _ in 0..3 {
            let (p, pp, _) = hermite_eval(n, z);
            let next = z - p / pp;
            if !(next > lo && next < hi) {
                break;
            }
            z = next;
        }
        let (_, pp, log_scale) = hermite_eval(n, z);
        t[i] = z;
        log_w[i] = 2f64.ln() - 2.0 * (pp.abs().ln() + log_scale);
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let norm = PI.sqrt().ln();
    for i in 0..m {
        let w = (log_w[i] - norm).exp();
        nodes[n - 1 - i] = t[i] * std::f64::consts::SQRT_2;
        nodes[i] = -t[i] * std::f64::consts::SQRT_2;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[m - 1] = 0.0;
    }
    Ok((nodes, weights))
}

/// Number of Jacobi-matrix eigenvalues below `x`.
fn sturm_count(n: usize, x: f64) -> usize {
    let mut count = 0;
    let mut q = -x;
    for k in 0..n {
        if k > 0 {
            q = -x - (k as f64 / 2.0) / q;
        }
        if q == 0.0 {
            q = -f64::EPSILON * (1.0 + x.abs());
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// `(p_n(z), p_n'(z), log_scale)` with both values divided by `exp(log_scale)`.
fn hermite_eval(n: usize, z: f64) -> (f64, f64, f64) {
    const BIG: f64 = 1e150;
    let mut p1 = PI.powf(-0.25);
    let mut p2 = 0.0;
    let mut log_scale = 0.0;
    for j in 1..=n {
        let jf = j as f64;
        let p3 = p2;
        p2 = p1;
        p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
        if p1.abs() > BIG {
            p1 /= BIG;
            p2 /= BIG;
            log_scale += BIG.ln();
        }
    }
    (p1, (2.0 * n as f64).sqrt() * p2, log_scale)
}

// Kronrod 15-point abscissae (descending, last is the centre) and weights;
// Gauss 7-point weights for the odd-indexed abscissae.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> Result<f64>>(f: &mut F, a: f64, b: f64) -> Result<(f64, f64)> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c)?;
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx)? + f(c + dx)?;
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    Ok((kronrod * h, ((kronrod - gauss) * h).abs()))
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

pub const MAX_PIECES: usize = 20_000;

/// Globally adaptive 7/15 Gauss-Kronrod on `[a, b]`.
///
/// Bisects the piece with the largest error estimate until the total estimate
/// is below `max(abs_tol, rel_tol * |value|)`. Returns `(value, error)`.
pub fn adaptive_gk<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<(f64, f64)> {
    if a == b {
        return Ok((0.0, 0.0));
    }
    let (value, error) = gk15(&mut f, a, b)?;
    let mut heap = BinaryHeap::new();
    heap.push(Piece { a, b, value, error });
    let mut total = value;
    let mut total_err = error;
    loop {
        if !total.is_finite() || !total_err.is_finite() {
            return Err(Error::NonConvergent(format!(
                "adaptive quadrature on [{a}, {b}]: non-finite integrand"
            )));
        }
        if total_err <= abs_tol.max(rel_tol * total.abs()) {
            break;
        }
        if heap.len() >= MAX_PIECES {
            return Err(Error::NonConvergent(format!(
                "adaptive quadrature on [{a}, {b}]: error {total_err:.3e} after {MAX_PIECES} pieces"
            )));
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval cannot be split further in double precision.
            return Err(Error::NonConvergent(format!(
                "adaptive quadrature exhausted precision near {mid}"
            )));
        }
        let (lv, le) = gk15(&mut f, worst.a, mid)?;
        let (rv, re) = gk15(&mut f, mid, worst.b)?;
        total += lv + rv - worst.value;
        total_err += le + re - worst.error;
        heap.push(Piece {
            a: worst.a,
            b: mid,
            value: lv,
            error: le,
        });
        heap.push(Piece {
            a: mid,
            b: worst.b,
            value: rv,
            error: re,
        });
    }
    // Re-add in a fixed order to remove drift from the running updates.
    let mut pieces: Vec<Piece> = heap.into_vec();
    pieces.sort_by(|p, q| p.a.total_cmp(&q.a));
    let value = pieces.iter().map(|p| p.value).sum();
    let error = pieces.iter().map(|p| p.error).sum();
    Ok((value, error))
}

/// Pairwise summation, fixed order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (l, r) = xs.split_at(xs.len() / 2);
    pairwise_sum(l) + pairwise_sum(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moment(nodes: &[f64], weights: &[f64], k: i32) -> f64 {
        nodes.iter().zip(weights).map(|(y, w)| w * y.powi(k)).sum()
    }

    #[test]
    fn hermite_small_rules_are_exact() {
        let (x, w) = gauss_hermite(1).unwrap();
        assert_eq!(x, vec![0.0]);
        assert!((w[0] - 1.0).abs() < 1e-15);
        let (x, w) = gauss_hermite(2).unwrap();
        assert!((x[1] - 1.0).abs() < 1e-15 && (w[0] - 0.5).abs() < 1e-15);
        let (x, w) = gauss_hermite(3).unwrap();
        assert!((x[2] - 3f64.sqrt()).abs() < 1e-14);
        assert!((w[1] - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn hermite_moments() {
        for n in [8usize, 20, 64, 200, 512, 1024] {
            let (x, w) = gauss_hermite(n).unwrap();
            assert!(x.windows(2).all(|p| p[0] < p[1]), "n={n}");
            assert!((moment(&x, &w, 0) - 1.0).abs() < 1e-13, "n={n}");
            assert!((moment(&x, &w, 2) - 1.0).abs() < 1e-12, "n={n}");
            assert!((moment(&x, &w, 4) - 3.0).abs() < 1e-11, "n={n}");
            let c: f64 = x.iter().zip(&w).map(|(y, w)| w * y.cos()).sum();
            if n >= 20 {
                assert!((c - (-0.5f64).exp()).abs() < 1e-13, "n={n}");
            }
        }
        let (x, w) = gauss_hermite(10).unwrap();
        // degree 18 is exact: E Y^18 = 17!!
        let df: f64 = (1..=17).step_by(2).map(|k| k as f64).product();
        assert!((moment(&x, &w, 18) / df - 1.0).abs() < 1e-11);
    }

    #[test]
    fn adaptive_known_integrals() {
        let (v, _) = adaptive_gk(|x| Ok(x.exp()), 0.0, 1.0, 1e-14, 0.0).unwrap();
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-14);
        let (v, _) = adaptive_gk(|x| Ok(x.sqrt()), 0.0, 1.0, 1e-12, 0.0).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
        let (v, _) = adaptive_gk(|x| Ok((-0.5 * x * x).exp()), -40.0, 40.0, 1e-14, 0.0).unwrap();
        assert!((v - (2.0 * PI).sqrt()).abs() < 1e-13);
        let (v, _) = adaptive_gk(|x| Ok(1.0 / (1e-4 + x * x)), -1.0, 1.0, 1e-13, 0.0).unwrap();
        let exact = 2.0 * (1.0f64 / 1e-2).atan() / 1e-2;
        assert!((v / exact - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adaptive_propagates_errors() {
        let r = adaptive_gk(|_| Err(Error::Overflow("x".into())), 0.0, 1.0, 1e-10, 0.0);
        assert_eq!(r.unwrap_err().name(), "Overflow");
        let r = adaptive_gk(|x| Ok(1.0 / x), 0.0, 1.0, 1e-10, 0.0);
        assert_eq!(r.unwrap_err().name(), "NonConvergent");
    }

    #[test]
    fn pairwise_sum_matches() {
        let xs: Vec<f64> = (1..=1000).map(|k| 1.0 / k as f64).collect();
        let direct: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - direct).abs() < 1e-13);
    }
}
