//! Pointwise and spectral evaluation of the periodized basis.

use std::f64::consts::{SQRT_2, TAU};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{Generator, WaveletFamily, WaveletIndex};
use crate::error::{Error, Result};

/// Dyadic refinement depth of the cascade table for the mother wavelet.
pub const CASCADE_DEPTH: u32 = 12;

/// Samples of `phi` and `psi` on the dyadic grid `k 2^{-depth}` of their common
/// support `[0, 2N - 1]`, from the cascade algorithm. Arbitrary points are
/// linearly interpolated.
#[derive(Clone, Debug)]
pub struct BasisTable {
    family: WaveletFamily,
    depth: u32,
    phi: Vec<f64>,
    psi: Vec<f64>,
}

impl BasisTable {
    pub fn new(family: &WaveletFamily) -> Result<Self> {
        Self::with_depth(family, CASCADE_DEPTH)
    }

    pub fn with_depth(family: &WaveletFamily, depth: u32) -> Result<Self> {
        let h = family.filter_taps();
        let g = family.highpass_taps();
        let support = family.support_length();
        if support == 1 {
            // Haar: phi = 1 on [0, 1), psi = +1 then -1
            let n = 1usize << depth;
            let mut phi = vec![1.0; n + 1];
            phi[n] = 0.0;
            let psi = (0..=n)
                .map(|i| if i == n { 0.0 } else if 2 * i < n { 1.0 } else { -1.0 })
                .collect();
            return Ok(BasisTable {
                family: family.clone(),
                depth,
                phi,
                psi,
            });
        }
        let phi_depth = depth + 1;
        let phi = cascade_phi(h, support, phi_depth)?;
        let fine = 1usize << phi_depth;
        let n = 1usize << depth;
        // psi(k/2^depth) = sqrt2 sum g[n] phi(2k/2^depth - n) and 2k/2^depth = k / 2^{depth-1}
        let psi = (0..=support * n)
            .map(|k| {
                g.iter()
                    .enumerate()
                    .map(|(tap, &gv)| {
                        // 2 k 2^{-depth} - tap in units of 2^{-phi_depth}
                        let idx = 4 * k as i64 - (tap * fine) as i64;
                        if idx < 0 || idx as usize >= phi.len() {
                            0.0
                        } else {
                            gv * phi[idx as usize]
                        }
                    })
                    .sum::<f64>()
                    * SQRT_2
            })
            .collect();
        let phi = phi.iter().step_by(2).copied().collect();
        Ok(BasisTable {
            family: family.clone(),
            depth,
            phi,
            psi,
        })
    }

    pub fn family(&self) -> &WaveletFamily {
        &self.family
    }

    fn lookup(table: &[f64], depth: u32, y: f64) -> f64 {
        let scaled = y * (1u64 << depth) as f64;
        if scaled < 0.0 {
            return 0.0;
        }
        let i = scaled.floor() as usize;
        if i + 1 >= table.len() {
            return if i + 1 == table.len() { table[i] } else { 0.0 };
        }
        let frac = scaled - i as f64;
        table[i] + frac * (table[i + 1] - table[i])
    }

    pub fn phi(&self, y: f64) -> f64 {
        Self::lookup(&self.phi, self.depth, y)
    }

    pub fn psi(&self, y: f64) -> f64 {
        Self::lookup(&self.psi, self.depth, y)
    }

    /// `Psi_{Gm}^j(x) = sum_l 2^{j/2} psi^G(2^j (x + l) - m)`.
    pub fn evaluate(&self, index: WaveletIndex, x: f64) -> f64 {
        let j = index.level;
        let scale = (j as f64).exp2();
        let support = self.family.support_length() as f64;
        let m = index.translation as f64;
        let x = x.rem_euclid(1.0);
        // 0 <= 2^j (x + l) - m <= support
        let l_min = (m / scale - x).ceil() as i64;
        let l_max = ((m + support) / scale - x).floor() as i64;
        let mut acc = 0.0;
        for l in l_min..=l_max {
            let y = scale * (x + l as f64) - m;
            acc += match index.generator {
                Generator::F => self.phi(y),
                Generator::M => self.psi(y),
            };
        }
        acc * (0.5 * j as f64).exp2()
    }

    /// `sup_x |Psi_{Gm}^j(x)|` sampled on `2^{grid_log2}` equispaced points.
    pub fn sup_norm(&self, index: WaveletIndex, grid_log2: u32) -> f64 {
        let n = 1usize << grid_log2;
        (0..n)
            .map(|i| self.evaluate(index, i as f64 / n as f64).abs())
            .fold(0.0, f64::max)
    }
}

/// Scaling function at `k 2^{-depth}`, `k = 0..=support 2^depth`.
fn cascade_phi(h: &[f64], support: usize, depth: u32) -> Result<Vec<f64>> {
    // integer values phi(1..support-1) solve phi(k) = sqrt2 sum_n h[n] phi(2k - n)
    let inner = support - 1;
    let mut mat = DMatrix::zeros(inner, inner);
    for row in 0..inner {
        let k = row + 1;
        for col in 0..inner {
            let i = col + 1;
            let tap = 2 * k as i64 - i as i64;
            if tap >= 0 && (tap as usize) < h.len() {
                mat[(row, col)] = SQRT_2 * h[tap as usize];
            }
        }
        mat[(row, row)] -= 1.0;
    }
    // replace one equation by the normalization sum phi(k) = 1
    for col in 0..inner {
        mat[(inner - 1, col)] = 1.0;
    }
    let mut rhs = DVector::zeros(inner);
    rhs[inner - 1] = 1.0;
    let ints = mat
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidInput("singular cascade system".into()))?;

    let n = 1usize << depth;
    let mut phi = vec![0.0; support * n + 1];
    for k in 1..support {
        phi[k * n] = ints[k - 1];
    }
    let mut step = n;
    while step > 1 {
        let half = step / 2;
        // fill odd multiples of `half`: phi(x) = sqrt2 sum h[t] phi(2x - t)
        let mut idx = half;
        while idx < phi.len() {
            let mut acc = 0.0;
            for (t, &hv) in h.iter().enumerate() {
                let target = 2 * idx as i64 - (t * n) as i64;
                if target >= 0 && (target as usize) < phi.len() {
                    acc += hv * phi[target as usize];
                }
            }
            phi[idx] = SQRT_2 * acc;
            idx += step;
        }
        step = half;
    }
    Ok(phi)
}

/// Fourier coefficients `c_k = int_0^1 Psi(x) e^{-2 pi i k x} dx` of the
/// periodized basis, from the infinite-product formula
/// `phi_hat(w) = prod_{r>=1} m0(w / 2^r)`.
#[derive(Clone, Debug)]
pub struct SpectralBasis {
    max_level: usize,
    max_mode: usize,
    /// `psi_hat(2 pi k / 2^j)` for `j = 0..=max_level`, `k = 0..=max_mode`.
    psi_hat: Vec<Vec<Complex64>>,
    phi_hat0: Vec<Complex64>,
}

fn symbol(taps: &[f64], w: f64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (n, &t) in taps.iter().enumerate() {
        acc += t * Complex64::from_polar(1.0, -(n as f64) * w);
    }
    acc / SQRT_2
}

fn phi_hat(h: &[f64], w: f64) -> Complex64 {
    let mut acc = Complex64::new(1.0, 0.0);
    let mut arg = w;
    for _ in 0..64 {
        arg *= 0.5;
        acc *= symbol(h, arg);
        if arg.abs() < 1e-18 {
            break;
        }
    }
    acc
}

impl SpectralBasis {
    pub fn new(family: &WaveletFamily, max_level: usize, max_mode: usize) -> Self {
        let h = family.filter_taps();
        let g = family.highpass_taps();
        let psi_hat = (0..=max_level)
            .map(|j| {
                (0..=max_mode)
                    .map(|k| {
                        let w = TAU * k as f64 / (j as f64).exp2();
                        symbol(g, 0.5 * w) * phi_hat(h, 0.5 * w)
                    })
                    .collect()
            })
            .collect();
        let phi_hat0 = (0..=max_mode)
            .map(|k| phi_hat(h, TAU * k as f64))
            .collect();
        SpectralBasis {
            max_level,
            max_mode,
            psi_hat,
            phi_hat0,
        }
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    pub fn max_mode(&self) -> usize {
        self.max_mode
    }

    /// `c_k` of one basis function, `0 <= k <= max_mode`.
    pub fn coefficient(&self, index: WaveletIndex, k: usize) -> Complex64 {
        match index.generator {
            Generator::F => self.phi_hat0[k],
            Generator::M => {
                let j = index.level;
                let phase = -TAU * (k * index.translation) as f64 / (j as f64).exp2();
                self.psi_hat[j][k] * Complex64::from_polar((-0.5 * j as f64).exp2(), phase)
            }
        }
    }

    /// `psi_hat(2 pi k / 2^j)` for the level, used by fast level-wise sums.
    pub fn level_symbol(&self, j: usize, k: usize) -> Complex64 {
        self.psi_hat[j][k]
    }

    pub fn scaling_symbol(&self, k: usize) -> Complex64 {
        self.phi_hat0[k]
    }
}
