//! Periodized Daubechies wavelets on the 1-torus.
//!
//! Coefficients are indexed by level `j >= 0`, generator `F` (scaling, only at
//! `j = 0`) or `M` (mother wavelet), and translation `m in 0..2^j`. The fast
//! transform uses circular convolution, which realizes exactly the periodized
//! basis `Psi_{Gm}^j(x) = sum_l 2^{j/2} psi^G(2^j (x + l) - m)`.

mod basis;
pub mod filters;
mod transform;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exponent::{regularity_threshold, ExponentField};

pub use basis::{BasisTable, SpectralBasis};
pub use transform::{analyze, synthesize};

/// A Daubechies family with `order` vanishing moments.
#[derive(Clone, Debug)]
pub struct WaveletFamily {
    order: usize,
    lowpass: Arc<Vec<f64>>,
    highpass: Arc<Vec<f64>>,
}

impl PartialEq for WaveletFamily {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order
    }
}

impl WaveletFamily {
    pub fn daubechies(order: usize) -> Result<Self> {
        let lowpass = filters::daubechies_filter(order)?;
        let highpass = filters::quadrature_mirror(&lowpass);
        Ok(WaveletFamily {
            order,
            lowpass: Arc::new(lowpass),
            highpass: Arc::new(highpass),
        })
    }

    /// Smallest admissible order for an `(s, q)` pair, never below 4.
    pub fn default_for(s: &ExponentField, q: &ExponentField) -> Result<Self> {
        let threshold = regularity_threshold(s, q, 1)?;
        let order = 4usize.max(threshold.ceil().max(0.0) as usize + 1);
        Self::daubechies(order)
    }

    /// Vanishing moments.
    pub fn order(&self) -> usize {
        self.order
    }

    /// Length of the support `[0, 2N - 1]` of the scaling function.
    pub fn support_length(&self) -> usize {
        2 * self.order - 1
    }

    pub fn filter_taps(&self) -> &[f64] {
        &self.lowpass
    }

    pub fn highpass_taps(&self) -> &[f64] {
        &self.highpass
    }

    /// Whether this family characterizes the `(s, q)` space.
    pub fn admits(&self, s: &ExponentField, q: &ExponentField) -> Result<bool> {
        let threshold = regularity_threshold(s, q, 1)?;
        Ok(self.order as f64 >= threshold.ceil() + 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Generator {
    F,
    M,
}

/// `(j, G, m)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WaveletIndex {
    pub level: usize,
    pub generator: Generator,
    pub translation: usize,
}

impl WaveletIndex {
    pub fn new(level: usize, generator: Generator, translation: usize) -> Result<Self> {
        if generator == Generator::F && level != 0 {
            return invalid("the scaling generator only occurs at level 0");
        }
        if translation >= 1usize << level {
            return invalid(format!(
                "translation {translation} outside 0..2^{level}"
            ));
        }
        Ok(WaveletIndex {
            level,
            generator,
            translation,
        })
    }

    pub fn scaling() -> Self {
        WaveletIndex {
            level: 0,
            generator: Generator::F,
            translation: 0,
        }
    }

    pub fn mother(level: usize, translation: usize) -> Self {
        Self::new(level, Generator::M, translation).expect("valid mother index")
    }
}

/// Whether entries hold `lambda = 2^{j/2} <f, Psi>` or `u = <f, Psi>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    Lambda,
    U,
}

impl Convention {
    pub fn name(self) -> &'static str {
        match self {
            Convention::Lambda => "lambda",
            Convention::U => "u",
        }
    }
}

/// Coefficient tree up to level `J`: one scaling coefficient plus `2^j`
/// detail coefficients per level `j = 0..=J`.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletCoefficients {
    convention: Convention,
    scaling: f64,
    details: Vec<Vec<f64>>,
}

impl WaveletCoefficients {
    pub fn zeros(max_level: usize, convention: Convention) -> Self {
        WaveletCoefficients {
            convention,
            scaling: 0.0,
            details: (0..=max_level).map(|j| vec![0.0; 1 << j]).collect(),
        }
    }

    pub fn from_parts(convention: Convention, scaling: f64, details: Vec<Vec<f64>>) -> Result<Self> {
        if details.is_empty() {
            return invalid("coefficient tree needs at least level 0");
        }
        for (j, level) in details.iter().enumerate() {
            if level.len() != 1 << j {
                return Err(Error::LevelMismatch(format!(
                    "level {j} holds {} entries, expected {}",
                    level.len(),
                    1usize << j
                )));
            }
        }
        Ok(WaveletCoefficients {
            convention,
            scaling,
            details,
        })
    }

    /// Flat layout: `(j ascending, F before M, m ascending)`, length `2^{J+1}`.
    pub fn from_flat(convention: Convention, flat: &[f64]) -> Result<Self> {
        let len = flat.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::LevelMismatch(format!(
                "flat coefficient vector of length {len} is not 2^(J+1)"
            )));
        }
        let max_level = len.trailing_zeros() as usize - 1;
        let mut details = Vec::with_capacity(max_level + 1);
        let mut offset = 1;
        for j in 0..=max_level {
            details.push(flat[offset..offset + (1 << j)].to_vec());
            offset += 1 << j;
        }
        Ok(WaveletCoefficients {
            convention,
            scaling: flat[0],
            details,
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.push(self.scaling);
        for level in &self.details {
            out.extend_from_slice(level);
        }
        out
    }

    /// Indices in flat order.
    pub fn indices(max_level: usize) -> Vec<WaveletIndex> {
        let mut out = vec![WaveletIndex::scaling()];
        for j in 0..=max_level {
            for m in 0..1 << j {
                out.push(WaveletIndex::mother(j, m));
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        2usize << self.max_level()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max_level(&self) -> usize {
        self.details.len() - 1
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }

    pub fn scaling(&self) -> f64 {
        self.scaling
    }

    pub fn set_scaling(&mut self, value: f64) {
        self.scaling = value;
    }

    pub fn level(&self, j: usize) -> &[f64] {
        &self.details[j]
    }

    pub fn level_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.details[j]
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.details
    }

    pub fn get(&self, index: WaveletIndex) -> f64 {
        match index.generator {
            Generator::F => self.scaling,
            Generator::M => self.details[index.level][index.translation],
        }
    }

    pub fn set(&mut self, index: WaveletIndex, value: f64) {
        match index.generator {
            Generator::F => self.scaling = value,
            Generator::M => self.details[index.level][index.translation] = value,
        }
    }

    /// Exact conversion `lambda = 2^{j/2} u`.
    pub fn to_convention(&self, target: Convention) -> Self {
        if target == self.convention {
            return self.clone();
        }
        let details = self
            .details
            .iter()
            .enumerate()
            .map(|(j, level)| {
                let factor = match target {
                    Convention::Lambda => level_factor(j),
                    Convention::U => 1.0 / level_factor(j),
                };
                level.iter().map(|v| v * factor).collect()
            })
            .collect();
        WaveletCoefficients {
            convention: target,
            scaling: self.scaling,
            details,
        }
    }

    pub fn require(&self, convention: Convention) -> Result<()> {
        if self.convention != convention {
            return Err(Error::ConventionMismatch {
                expected: convention.name(),
                found: self.convention.name(),
            });
        }
        Ok(())
    }

    /// Keeps levels `0..=level`, zeroing nothing else; the result has the
    /// smaller tree shape.
    pub fn truncated(&self, level: usize) -> Self {
        let keep = level.min(self.max_level());
        WaveletCoefficients {
            convention: self.convention,
            scaling: self.scaling,
            details: self.details[..=keep].to_vec(),
        }
    }

    /// Same shape, with every level above `level` set to zero.
    pub fn zero_above(&self, level: usize) -> Self {
        let mut out = self.clone();
        for (j, lvl) in out.details.iter_mut().enumerate() {
            if j > level {
                lvl.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        out
    }

    /// Zero-pads (or truncates) to `max_level`.
    pub fn resized(&self, max_level: usize) -> Self {
        let mut out = Self::zeros(max_level, self.convention);
        out.scaling = self.scaling;
        for (j, lvl) in self.details.iter().enumerate().take(max_level + 1) {
            out.details[j].copy_from_slice(lvl);
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        WaveletCoefficients {
            convention: self.convention,
            scaling: f(self.scaling),
            details: self
                .details
                .iter()
                .map(|lvl| lvl.iter().map(|&v| f(v)).collect())
                .collect(),
        }
    }

    pub fn norm_squared(&self) -> f64 {
        self.scaling * self.scaling
            + self
                .details
                .iter()
                .flat_map(|lvl| lvl.iter())
                .map(|v| v * v)
                .sum::<f64>()
    }
}

/// `2^{j/2}`, the factor between the `u` and `lambda` conventions at level `j`.
pub fn level_factor(j: usize) -> f64 {
    (0.5 * j as f64).exp2()
}
