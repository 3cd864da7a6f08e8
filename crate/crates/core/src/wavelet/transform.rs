use super::{Convention, WaveletCoefficients, WaveletFamily};
use crate::error::{Error, Result};

fn split(input: &[f64], lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let len = input.len();
    let half = len / 2;
    let mut approx = vec![0.0; half];
    let mut detail = vec![0.0; half];
    for k in 0..half {
        let (mut a, mut d) = (0.0, 0.0);
        for (n, (&h, &g)) in lo.iter().zip(hi).enumerate() {
            let v = input[(2 * k + n) % len];
            a += h * v;
            d += g * v;
        }
        approx[k] = a;
        detail[k] = d;
    }
    (approx, detail)
}

fn merge(approx: &[f64], detail: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let len = 2 * approx.len();
    let mut out = vec![0.0; len];
    for k in 0..approx.len() {
        for (n, (&h, &g)) in lo.iter().zip(hi).enumerate() {
            out[(2 * k + n) % len] += h * approx[k] + g * detail[k];
        }
    }
    out
}

/// Periodic fast wavelet transform of `2^L` grid samples.
///
/// Samples are read as `f(i 2^{-L})`; the returned tree has `J = L - 1` and
/// holds `u`-convention coefficients, so that
/// `sum |coeff|^2 = 2^{-L} sum |samples|^2`.
pub fn analyze(samples: &[f64], family: &WaveletFamily) -> Result<WaveletCoefficients> {
    let len = samples.len();
    if len < 2 || !len.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(len));
    }
    if len < family.support_length() {
        return Err(Error::InvalidInput(format!(
            "grid of {len} samples is shorter than the support length {}",
            family.support_length()
        )));
    }
    let levels = len.trailing_zeros() as usize;
    let scale = (-0.5 * levels as f64).exp2();
    let mut approx: Vec<f64> = samples.iter().map(|v| v * scale).collect();
    let mut details = vec![Vec::new(); levels];
    for j in (0..levels).rev() {
        let (a, d) = split(&approx, family.filter_taps(), family.highpass_taps());
        details[j] = d;
        approx = a;
    }
    WaveletCoefficients::from_parts(Convention::U, approx[0], details)
}

/// Inverse of [`analyze`] onto a grid of `grid_len >= 2^{J+1}` samples; levels
/// between `J` and the grid resolution are taken as zero.
pub fn synthesize(
    coeffs: &WaveletCoefficients,
    family: &WaveletFamily,
    grid_len: usize,
) -> Result<Vec<f64>> {
    if grid_len < 2 || !grid_len.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(grid_len));
    }
    let needed = coeffs.len();
    if grid_len < needed {
        return Err(Error::LevelMismatch(format!(
            "coefficients up to level {} need a grid of at least {needed} samples, got {grid_len}",
            coeffs.max_level()
        )));
    }
    let coeffs = coeffs.to_convention(Convention::U);
    let levels = grid_len.trailing_zeros() as usize;
    let mut approx = vec![coeffs.scaling()];
    for j in 0..levels {
        let zeros;
        let detail: &[f64] = if j <= coeffs.max_level() {
            coeffs.level(j)
        } else {
            zeros = vec![0.0; 1 << j];
            &zeros
        };
        approx = merge(&approx, detail, family.filter_taps(), family.highpass_taps());
    }
    let scale = (0.5 * levels as f64).exp2();
    approx.iter_mut().for_each(|v| *v *= scale);
    Ok(approx)
}
