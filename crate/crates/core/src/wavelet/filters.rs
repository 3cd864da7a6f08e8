//! Daubechies scaling filters by spectral factorization.
//!
//! `|m0(w)|^2 = cos^{2N}(w/2) P(sin^2(w/2))` with
//! `P(y) = sum_{k<N} C(N-1+k, k) y^k`. Each root `y_i` of `P` maps to a pair
//! `z + 1/z = 2 - 4 y_i`; keeping the root inside the unit circle gives the
//! minimum-phase filter.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{invalid, Result};

/// Largest supported number of vanishing moments. Beyond this the companion
/// matrix roots lose the 1e-12 orthonormality margin in double precision.
pub const MAX_ORDER: usize = 12;

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn eval_poly(coeffs: &[f64], z: Complex64) -> (Complex64, Complex64) {
    // Horner for value and derivative; coeffs[k] multiplies z^k
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &c in coeffs.iter().rev() {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

fn poly_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let degree = coeffs.len() - 1;
    if degree == 0 {
        return Vec::new();
    }
    let lead = coeffs[degree];
    let companion = DMatrix::from_fn(degree, degree, |i, j| {
        if i == 0 {
            -coeffs[degree - 1 - j] / lead
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    companion
        .complex_eigenvalues()
        .iter()
        .map(|&root| {
            let mut z = root;
            for _ in 0..8 {
                let (p, dp) = eval_poly(coeffs, z);
                if dp.norm() == 0.0 {
                    break;
                }
                z -= p / dp;
            }
            z
        })
        .collect()
}

/// Low-pass analysis filter with `2 * order` taps, normalized to sum `sqrt 2`.
pub fn daubechies_filter(order: usize) -> Result<Vec<f64>> {
    if order == 0 || order > MAX_ORDER {
        return invalid(format!("Daubechies order must lie in 1..={MAX_ORDER}, got {order}"));
    }
    let p: Vec<f64> = (0..order).map(|k| binomial(order - 1 + k, k)).collect();
    // polynomial in z, lowest degree first
    let mut h = vec![Complex64::new(1.0, 0.0)];
    let mul = |poly: &[Complex64], root: Complex64| {
        let mut out = vec![Complex64::new(0.0, 0.0); poly.len() + 1];
        for (i, &c) in poly.iter().enumerate() {
            out[i + 1] += c;
            out[i] -= c * root;
        }
        out
    };
    for _ in 0..order {
        h = mul(&h, Complex64::new(-1.0, 0.0));
    }
    for y in poly_roots(&p) {
        let b = Complex64::new(2.0, 0.0) - 4.0 * y;
        let disc = (b * b - 4.0).sqrt();
        let z1 = (b + disc) / 2.0;
        let z2 = (b - disc) / 2.0;
        let inside = if z1.norm() < z2.norm() { z1 } else { z2 };
        h = mul(&h, inside);
    }
    let taps: Vec<f64> = h.iter().map(|c| c.re).collect();
    let sum: f64 = taps.iter().sum();
    let scale = std::f64::consts::SQRT_2 / sum;
    Ok(taps.into_iter().map(|t| t * scale).collect())
}

/// Quadrature-mirror high-pass filter `g[n] = (-1)^n h[L-1-n]`.
pub fn quadrature_mirror(h: &[f64]) -> Vec<f64> {
    let len = h.len();
    (0..len)
        .map(|n| {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            sign * h[len - 1 - n]
        })
        .collect()
}
