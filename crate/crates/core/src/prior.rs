//! The `(delta, B^{s(.)}_{q(.)})` prior.
//!
//! A draw is the truncated wavelet series `u^J = sum gamma_Gm^j xi_Gm^j Psi_Gm^j`
//! with i.i.d. generalized `q(.)`-exponential `xi` and deterministic scaling
//! `gamma_Gm^j = 2^{-j (s(2^-j m) + 1/2 - 1/q^+)} delta^{-1/q^+}`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma as gamma_fn, gamma_ur};

use crate::error::{invalid, Error, Result};
use crate::exponent::{ExponentField, HoelderBudget};
use crate::modular::{ModularEvaluator, ModularSpec};
use crate::quadrature::mean_stderr;
use crate::rng;
use crate::wavelet::{
    synthesize, BasisTable, Convention, Generator, WaveletCoefficients, WaveletFamily,
    WaveletIndex,
};

/// Proposal budget of the rejection sampler for a single draw.
pub const MAX_REJECTION_PROPOSALS: usize = 1_000_000;

/// Finite quadrature `(point, weight)` standing in for the probability measure kappa.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaQuadrature {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl KappaQuadrature {
    /// `n` equispaced, equally weighted nodes.
    pub fn uniform(n: usize) -> Self {
        KappaQuadrature {
            points: (0..n).map(|i| i as f64 / n as f64).collect(),
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn new(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let k = KappaQuadrature { points, weights };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() || self.points.len() != self.weights.len() {
            return invalid("kappa needs matching, nonempty points and weights");
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) {
            return invalid("kappa weights must be nonnegative");
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return invalid(format!("kappa weights must sum to 1, got {total}"));
        }
        Ok(())
    }

    pub fn is_uniform(&self) -> bool {
        let w0 = self.weights[0];
        self.weights.iter().all(|&w| w == w0)
    }
}

impl Default for KappaQuadrature {
    fn default() -> Self {
        Self::uniform(64)
    }
}

/// Centered law on the real line with density proportional to
/// `exp(-1/2 sum_i w_i |x|^{q(y_i)})`.
///
/// Rejection sampling from an envelope that is flat on `(-1, 1)` and equals
/// `exp(-|x|^p / 2)` beyond, where `p` is the smallest exponent at the kappa
/// nodes. Tail proposals are `sign (2W)^{1/p}` with `W ~ Gamma(1/p, 1)`.
#[derive(Clone, Debug)]
pub struct GeneralizedExponential {
    exponents: Vec<f64>,
    weights: Vec<f64>,
    min_exponent: f64,
    center_probability: f64,
    tail: Gamma<f64>,
}

impl GeneralizedExponential {
    pub fn new(q: &ExponentField, kappa: &KappaQuadrature) -> Result<Self> {
        kappa.validate()?;
        if q.lower_bound() < 1.0 {
            return invalid(format!(
                "generalized exponential needs q^- >= 1, got {}",
                q.lower_bound()
            ));
        }
        let mut exponents = Vec::new();
        let mut weights = Vec::new();
        for (&y, &w) in kappa.points.iter().zip(&kappa.weights) {
            if w > 0.0 {
                exponents.push(q.evaluate(y));
                weights.push(w);
            }
        }
        let p = exponents.iter().copied().fold(f64::INFINITY, f64::min);
        // 2 int_1^inf exp(-x^p/2) dx = 2 (2^{1/p}/p) Gamma(1/p, 1/2)
        let a = 1.0 / p;
        let tail_mass = 2.0 * a.exp2() / p * gamma_ur(a, 0.5) * gamma_fn(a);
        let tail = Gamma::new(a, 1.0).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(GeneralizedExponential {
            exponents,
            weights,
            min_exponent: p,
            center_probability: 2.0 / (2.0 + tail_mass),
            tail,
        })
    }

    /// `phi(x) = sum_i w_i |x|^{q(y_i)}`.
    pub fn potential(&self, x: f64) -> f64 {
        let ax = x.abs();
        if ax == 0.0 {
            return 0.0;
        }
        let ln = ax.ln();
        self.exponents
            .iter()
            .zip(&self.weights)
            .map(|(&q, &w)| w * (q * ln).exp())
            .sum()
    }

    /// `d phi / dx`.
    pub fn potential_derivative(&self, x: f64) -> f64 {
        let ax = x.abs();
        if ax == 0.0 {
            return 0.0;
        }
        let ln = ax.ln();
        let mag: f64 = self
            .exponents
            .iter()
            .zip(&self.weights)
            .map(|(&q, &w)| w * q * ((q - 1.0) * ln).exp())
            .sum();
        mag * x.signum()
    }

    /// Unnormalized density `exp(-phi(x)/2)`.
    pub fn density(&self, x: f64) -> f64 {
        (-0.5 * self.potential(x)).exp()
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Result<f64> {
        let p = self.min_exponent;
        let mut proposals = 0;
        while proposals < MAX_REJECTION_PROPOSALS {
            if rng.random::<f64>() < self.center_probability {
                proposals += 1;
                let x = rng.random_range(-1.0..1.0);
                if rng.random::<f64>() < self.density(x) {
                    return Ok(x);
                }
            } else {
                // tail proposal, redrawn until |x| >= 1
                loop {
                    proposals += 1;
                    if proposals > MAX_REJECTION_PROPOSALS {
                        return Err(Error::SamplerExhausted(MAX_REJECTION_PROPOSALS));
                    }
                    let w: f64 = self.tail.sample(rng);
                    let x = (2.0 * w).powf(1.0 / p);
                    if x < 1.0 {
                        continue;
                    }
                    let x = if rng.random::<bool>() { x } else { -x };
                    let ratio = (-0.5 * self.potential(x) + 0.5 * x.abs().powf(p)).exp();
                    if rng.random::<f64>() < ratio {
                        return Ok(x);
                    }
                    break;
                }
            }
        }
        Err(Error::SamplerExhausted(MAX_REJECTION_PROPOSALS))
    }
}

/// i.i.d. draws from the generalized `q(.)`-exponential law.
pub fn sample_xi(
    q: &ExponentField,
    kappa: &KappaQuadrature,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let law = GeneralizedExponential::new(q, kappa)?;
    (0..count).map(|_| law.sample(rng)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorSpec {
    pub s: ExponentField,
    pub q: ExponentField,
    pub delta: f64,
    pub kappa: KappaQuadrature,
    pub truncation: usize,
    pub family: WaveletFamily,
    pub seed: u64,
    /// Optional mean function added after synthesis.
    pub mean: Option<ExponentField>,
}

impl PriorSpec {
    pub fn new(s: ExponentField, q: ExponentField, delta: f64, truncation: usize, seed: u64) -> Result<Self> {
        let family = WaveletFamily::default_for(&s, &q)?;
        let spec = PriorSpec {
            s,
            q,
            delta,
            kappa: KappaQuadrature::default(),
            truncation,
            family,
            seed,
            mean: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s.lower_bound() > 0.0) {
            return invalid(format!("prior needs s^- > 0, got {}", self.s.lower_bound()));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return invalid("prior needs delta > 0");
        }
        if self.q.lower_bound() < 1.0 {
            return invalid(format!("prior needs q^- >= 1, got {}", self.q.lower_bound()));
        }
        self.kappa.validate()
    }

    pub fn with_truncation(&self, truncation: usize) -> Self {
        PriorSpec {
            truncation,
            ..self.clone()
        }
    }

    pub fn modular_spec(&self) -> Result<ModularSpec> {
        ModularSpec::new(self.s.clone(), self.q.clone())
    }

    /// Number of coefficients `2^{J+1}`.
    pub fn dimension(&self) -> usize {
        2usize << self.truncation
    }
}

/// `gamma_Gm^j` (identical for both generators at level 0).
pub fn gamma(j: usize, m: usize, spec: &PriorSpec) -> Result<f64> {
    if m >= 1usize << j {
        return invalid(format!("translation {m} outside 0..2^{j}"));
    }
    Ok(gamma_unchecked(j, m, &spec.s, spec.q.upper_bound(), spec.delta))
}

fn gamma_unchecked(j: usize, m: usize, s: &ExponentField, q_plus: f64, delta: f64) -> f64 {
    let sm = s.evaluate(m as f64 / (1u64 << j) as f64);
    (-(j as f64) * (sm + 0.5 - 1.0 / q_plus)).exp2() * delta.powf(-1.0 / q_plus)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorSample {
    /// `u`-convention coefficients `gamma * xi`.
    pub coeffs: WaveletCoefficients,
    /// Raw draws, same tree shape.
    pub xi: WaveletCoefficients,
    pub truncation: usize,
}

impl PriorSample {
    pub fn lambda(&self) -> WaveletCoefficients {
        self.coeffs.to_convention(Convention::Lambda)
    }
}

/// Precomputed scalings and law for repeated draws from one spec.
#[derive(Clone, Debug)]
pub struct PriorSampler {
    spec: PriorSpec,
    law: GeneralizedExponential,
    gammas: WaveletCoefficients,
}

fn generator_code(g: Generator) -> u64 {
    match g {
        Generator::F => 0,
        Generator::M => 1,
    }
}

impl PriorSampler {
    pub fn new(spec: PriorSpec) -> Result<Self> {
        spec.validate()?;
        let law = GeneralizedExponential::new(&spec.q, &spec.kappa)?;
        let q_plus = spec.q.upper_bound();
        let mut gammas = WaveletCoefficients::zeros(spec.truncation, Convention::U);
        for idx in WaveletCoefficients::indices(spec.truncation) {
            gammas.set(
                idx,
                gamma_unchecked(idx.level, idx.translation, &spec.s, q_plus, spec.delta),
            );
        }
        Ok(PriorSampler { spec, law, gammas })
    }

    pub fn spec(&self) -> &PriorSpec {
        &self.spec
    }

    pub fn law(&self) -> &GeneralizedExponential {
        &self.law
    }

    /// `gamma` in tree form, `u` convention.
    pub fn gammas(&self) -> &WaveletCoefficients {
        &self.gammas
    }

    /// Raw draw `xi` for one index of draw number `draw`; keyed by
    /// `(seed, draw, j, G, m)` so it is shared across truncation levels.
    pub fn xi(&self, draw: u64, index: WaveletIndex) -> Result<f64> {
        let mut rng = rng::stream(
            self.spec.seed,
            "prior",
            &[
                draw,
                index.level as u64,
                generator_code(index.generator),
                index.translation as u64,
            ],
        );
        self.law.sample(&mut rng)
    }

    /// Draw number `draw` of the prior.
    pub fn sample(&self, draw: u64) -> Result<PriorSample> {
        let j_max = self.spec.truncation;
        let indices = WaveletCoefficients::indices(j_max);
        let flat = indices
            .iter()
            .map(|&idx| self.xi(draw, idx))
            .collect::<Result<Vec<f64>>>()?;
        let xi = WaveletCoefficients::from_flat(Convention::U, &flat)?;
        Ok(self.assemble(xi))
    }

    /// `u = gamma * xi` for a given raw vector.
    pub fn assemble(&self, xi: WaveletCoefficients) -> PriorSample {
        let g = self.gammas.to_flat();
        let u: Vec<f64> = xi.to_flat().iter().zip(&g).map(|(x, g)| x * g).collect();
        PriorSample {
            coeffs: WaveletCoefficients::from_flat(Convention::U, &u).expect("tree shape"),
            xi,
            truncation: self.spec.truncation,
        }
    }

    /// Grid values of a sample, including the optional mean function.
    pub fn synthesize(&self, sample: &PriorSample, grid_len: usize) -> Result<Vec<f64>> {
        let mut values = synthesize(&sample.coeffs, &self.spec.family, grid_len)?;
        if let Some(mean) = &self.spec.mean {
            for (i, v) in values.iter_mut().enumerate() {
                *v += mean.evaluate(i as f64 / grid_len as f64);
            }
        }
        Ok(values)
    }
}

pub fn sample_prior(spec: &PriorSpec, draw: u64) -> Result<PriorSample> {
    PriorSampler::new(spec.clone())?.sample(draw)
}

/// Monte Carlo estimate of `E exp(alpha rho_{B^{t}_{q}}(u^J))` with its
/// standard error. Overflowing draws make the estimate `+inf`.
pub fn fernique_exp_moment(
    spec: &PriorSpec,
    t: &ExponentField,
    alpha: f64,
    sample_count: usize,
) -> Result<(f64, f64)> {
    if !(alpha >= 0.0) {
        return invalid("alpha must be nonnegative");
    }
    if sample_count < 2 {
        return invalid("exp-moment estimate needs at least two samples");
    }
    if alpha == 0.0 {
        return Ok((1.0, 0.0));
    }
    let modulars = prior_modulars(spec, t, sample_count)?;
    let values: Vec<f64> = modulars.iter().map(|r| (alpha * r).exp()).collect();
    if values.iter().any(|v| v.is_infinite()) {
        return Ok((f64::INFINITY, f64::INFINITY));
    }
    Ok(mean_stderr(&values))
}

/// `rho_{B^{t}_{q}}(u^J)` for draws `0..sample_count`.
pub fn prior_modulars(spec: &PriorSpec, t: &ExponentField, sample_count: usize) -> Result<Vec<f64>> {
    let sampler = PriorSampler::new(spec.clone())?;
    let eval = ModularEvaluator::new(ModularSpec::new(t.clone(), spec.q.clone())?)?;
    (0..sample_count as u64)
        .into_par_iter()
        .map(|i| eval.value(&sampler.sample(i)?.lambda()))
        .collect()
}

/// Mean and standard error of the `t`-modular of prior draws.
pub fn expectation_modular(spec: &PriorSpec, t: &ExponentField, sample_count: usize) -> Result<(f64, f64)> {
    let sampler = PriorSampler::new(spec.clone())?;
    let modular = ModularSpec::new(t.clone(), spec.q.clone())?;
    crate::modular::expectation_modular_estimate(
        |i| Ok(sampler.sample(i as u64)?.lambda()),
        &modular,
        sample_count,
    )
}

/// `inf s > n (b + 1/q^+ + theta (a - b) / 2)`.
pub fn hoelder_condition(
    s: &ExponentField,
    q: &ExponentField,
    budget: &HoelderBudget,
    n: usize,
) -> bool {
    let n = n as f64;
    s.lower_bound() > n * (budget.b + 1.0 / q.upper_bound() + 0.5 * budget.theta * (budget.a - budget.b))
}

/// Partial sums of the Kolmogorov-test series with their per-level terms.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KolmogorovSums {
    pub s1: f64,
    pub s2: f64,
    pub s1_terms: Vec<f64>,
    pub s2_terms: Vec<f64>,
    /// measured `sup |Psi^j|` per level (mother generator)
    pub sup_norms: Vec<f64>,
}

/// `S1 = sum gamma^2 ||Psi||_inf^2` and
/// `S2 = sum ||gamma Psi||_inf^{2-theta} (gamma 2^{j a})^theta` up to level `max_level`,
/// with sup norms measured from the cascade table.
pub fn kolmogorov_sums(spec: &PriorSpec, budget: &HoelderBudget, max_level: usize) -> Result<KolmogorovSums> {
    let table = BasisTable::new(&spec.family)?;
    let q_plus = spec.q.upper_bound();
    let theta = budget.theta;
    let scaling_sup = table.sup_norm(WaveletIndex::scaling(), 12);
    let mut s1_terms = Vec::with_capacity(max_level + 1);
    let mut s2_terms = Vec::with_capacity(max_level + 1);
    let mut sup_norms = Vec::with_capacity(max_level + 1);
    for j in 0..=max_level {
        // translates share the sup norm; sample densely relative to the level
        let sup = table.sup_norm(WaveletIndex::mother(j, 0), (j as u32 + 10).max(12));
        sup_norms.push(sup);
        let mut t1 = 0.0;
        let mut t2 = 0.0;
        let hoelder = (budget.a * j as f64).exp2();
        let mut add = |g: f64, norm: f64| {
            t1 += g * g * norm * norm;
            t2 += (g * norm).powf(2.0 - theta) * (g * hoelder).powf(theta);
        };
        for m in 0..1usize << j {
            let g = gamma_unchecked(j, m, &spec.s, q_plus, spec.delta);
            add(g, sup);
        }
        if j == 0 {
            add(gamma_unchecked(0, 0, &spec.s, q_plus, spec.delta), scaling_sup);
        }
        s1_terms.push(t1);
        s2_terms.push(t2);
    }
    Ok(KolmogorovSums {
        s1: s1_terms.iter().sum(),
        s2: s2_terms.iter().sum(),
        s1_terms,
        s2_terms,
        sup_norms,
    })
}

/// Least-squares slope of `log2 sup_x |u(x+h) - u(x)|` against `log2 h` over
/// dyadic lags `h = 2^-r`, `r = 2..=J+1`. Returns `+inf` for a constant sample.
pub fn empirical_hoelder_exponent(
    sample: &PriorSample,
    family: &WaveletFamily,
    grid: usize,
) -> Result<f64> {
    let j_max = sample.truncation;
    if !grid.is_power_of_two() || grid < 8usize << j_max {
        return invalid(format!(
            "Hölder diagnostic needs a power-of-two grid of at least 2^(J+3) = {}",
            8usize << j_max
        ));
    }
    let values = synthesize(&sample.coeffs, family, grid)?;
    hoelder_slope(&values, 2, j_max as u32 + 1)
}

/// Slope fit on grid values for lags `2^-r`, `r in r_min..=r_max`.
pub fn hoelder_slope(values: &[f64], r_min: u32, r_max: u32) -> Result<f64> {
    let n = values.len();
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let floor = 1e-13 * (1.0 + scale);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in r_min.max(1)..=r_max {
        let lag = n >> r;
        if lag == 0 {
            break;
        }
        let sup = (0..n)
            .map(|i| (values[(i + lag) % n] - values[i]).abs())
            .fold(0.0, f64::max);
        if sup <= floor {
            continue;
        }
        xs.push(-(r as f64));
        ys.push(sup.log2());
    }
    if xs.is_empty() {
        return Ok(f64::INFINITY);
    }
    if xs.len() < 2 {
        return invalid("Hölder fit needs at least two resolved lags");
    }
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::analyze;

    fn c(v: f64) -> ExponentField {
        ExponentField::constant(v)
    }

    fn spec(s: ExponentField, q: ExponentField, delta: f64, j: usize) -> PriorSpec {
        PriorSpec::new(s, q, delta, j, 17).unwrap()
    }

    #[test]
    fn gamma_examples() {
        let sp = spec(c(1.0), c(2.0), 1.0, 3);
        assert_eq!(gamma(0, 0, &sp).unwrap(), 1.0);
        assert!((gamma(2, 1, &sp).unwrap() - 0.25).abs() < 1e-15);
        let sp16 = spec(c(1.0), c(2.0), 16.0, 3);
        assert!((gamma(2, 1, &sp16).unwrap() - 0.0625).abs() < 1e-15);
        assert!(gamma(2, 4, &sp).is_err());
    }

    #[test]
    fn gamma_scaling_law_in_s() {
        let s = ExponentField::cosine(1.2, 0.3);
        let shifted = ExponentField::cosine(1.7, 0.3);
        let a = spec(s, c(2.0), 3.0, 4);
        let b = spec(shifted, c(2.0), 3.0, 4);
        for j in 0..5 {
            for m in 0..1 << j {
                let lhs = gamma(j, m, &b).unwrap();
                let rhs = gamma(j, m, &a).unwrap() * (-0.5 * j as f64).exp2();
                assert!((lhs - rhs).abs() <= 1e-15 * rhs, "{j} {m}");
            }
        }
    }

    #[test]
    fn spec_invariants() {
        assert!(PriorSpec::new(c(0.0), c(2.0), 1.0, 3, 0).is_err());
        assert!(PriorSpec::new(c(1.0), c(2.0), 0.0, 3, 0).is_err());
        assert!(KappaQuadrature::new(vec![0.0, 0.5], vec![0.5, 0.6]).is_err());
        assert!(KappaQuadrature::new(vec![0.0, 0.5], vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_truncation_consistent() {
        let sp = spec(ExponentField::cosine(1.5, 0.3), ExponentField::cosine(1.5, 0.4), 2.0, 5);
        let a = sample_prior(&sp, 3).unwrap();
        let b = sample_prior(&sp, 3).unwrap();
        assert_eq!(a, b);
        let small = sample_prior(&sp.with_truncation(3), 3).unwrap();
        assert_eq!(small.xi.to_flat()[..], a.xi.to_flat()[..16]);
        // u = gamma xi exactly
        let sampler = PriorSampler::new(sp.clone()).unwrap();
        for ((u, x), g) in a.coeffs.to_flat().iter().zip(a.xi.to_flat()).zip(sampler.gammas().to_flat()) {
            assert_eq!(*u, x * g);
        }
    }

    #[test]
    fn doubling_delta_scales_coefficients() {
        let sp = spec(c(1.5), c(2.0), 2.0, 4);
        let mut sp2 = sp.clone();
        sp2.delta = 4.0;
        let a = sample_prior(&sp, 0).unwrap();
        let b = sample_prior(&sp2, 0).unwrap();
        let factor = 2f64.powf(-0.5);
        for (x, y) in a.coeffs.to_flat().iter().zip(b.coeffs.to_flat()) {
            assert!((y - x * factor).abs() <= 1e-15 * x.abs());
        }
    }

    #[test]
    fn fernique_alpha_zero_is_exactly_one() {
        let sp = spec(c(1.5), c(2.0), 4.0, 3);
        assert_eq!(fernique_exp_moment(&sp, &c(0.2), 0.0, 10).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn hoelder_condition_examples() {
        let budget = HoelderBudget::new(0.5, 1.0, 1.0, 1.0).unwrap();
        assert!(hoelder_condition(&c(2.0), &c(2.0), &budget, 1));
        assert!(!hoelder_condition(&c(1.0), &c(2.0), &budget, 1));
        // theta -> 0 reduces to s^- > b + 1/q^+
        let thin = HoelderBudget::new(0.5, 1.0, 1.0, 1e-9).unwrap();
        assert!(hoelder_condition(&c(1.0001), &c(2.0), &thin, 1));
        assert!(!hoelder_condition(&c(0.9999), &c(2.0), &thin, 1));
    }

    #[test]
    fn kolmogorov_level_zero_is_single_term() {
        let sp = spec(c(2.0), c(2.0), 1.0, 3);
        let budget = HoelderBudget::new(0.5, 1.5, 1.0, 1.0).unwrap();
        let sums = kolmogorov_sums(&sp, &budget, 0).unwrap();
        let table = BasisTable::new(&sp.family).unwrap();
        let f = table.sup_norm(WaveletIndex::scaling(), 12);
        let m = table.sup_norm(WaveletIndex::mother(0, 0), 12);
        assert!((sums.s1 - (f * f + m * m)).abs() < 1e-12);
    }

    #[test]
    fn kolmogorov_increments_follow_condition() {
        let budget = HoelderBudget::new(0.5, 1.5, 1.0, 1.0).unwrap();
        let good = spec(ExponentField::cosine(2.0, 0.3), c(2.0), 1.0, 8);
        assert!(hoelder_condition(&good.s, &good.q, &budget, 1));
        let sums = kolmogorov_sums(&good, &budget, 8).unwrap();
        for j in 3..8 {
            assert!(sums.s2_terms[j + 1] < sums.s2_terms[j], "{:?}", sums.s2_terms);
            assert!(sums.s1_terms[j + 1] < sums.s1_terms[j]);
        }
        let bad = spec(c(1.2), c(2.0), 1.0, 8);
        let sums = kolmogorov_sums(&bad, &budget, 8).unwrap();
        for j in 3..8 {
            assert!(sums.s2_terms[j + 1] > sums.s2_terms[j], "{:?}", sums.s2_terms);
        }
    }

    #[test]
    fn hoelder_exponent_of_constant_and_cosine() {
        let fam = WaveletFamily::daubechies(4).unwrap();
        let mut coeffs = WaveletCoefficients::zeros(5, Convention::U);
        coeffs.set_scaling(1.0);
        let constant = PriorSample {
            xi: coeffs.clone(),
            coeffs,
            truncation: 5,
        };
        assert_eq!(empirical_hoelder_exponent(&constant, &fam, 256).unwrap(), f64::INFINITY);

        let n = 64;
        let x: Vec<f64> = (0..n).map(|i| (std::f64::consts::TAU * i as f64 / n as f64).cos()).collect();
        let coeffs = analyze(&x, &fam).unwrap();
        let cosine = PriorSample {
            xi: coeffs.clone(),
            coeffs,
            truncation: 5,
        };
        let slope = empirical_hoelder_exponent(&cosine, &fam, 512).unwrap();
        assert!((slope - 1.0).abs() < 0.1, "{slope}");
        assert!(empirical_hoelder_exponent(&cosine, &fam, 128).is_err());
    }

    #[test]
    fn laplace_variance() {
        let mut rng = rng::stream(5, "test", &[]);
        let draws = sample_xi(&c(1.0), &KappaQuadrature::default(), 100_000, &mut rng).unwrap();
        let (mean, se) = mean_stderr(&draws);
        let var = draws.iter().map(|x| x * x).sum::<f64>() / draws.len() as f64;
        assert!((var - 8.0).abs() < 0.3, "{var}");
        assert!(mean.abs() < 4.0 * se);
    }

    #[test]
    fn potential_derivative_matches_difference() {
        let law = GeneralizedExponential::new(&ExponentField::cosine(1.5, 0.4), &KappaQuadrature::uniform(16)).unwrap();
        for x in [-2.0, -0.3, 0.7, 1.9] {
            let h = 1e-6;
            let fd = (law.potential(x + h) - law.potential(x - h)) / (2.0 * h);
            assert!((fd - law.potential_derivative(x)).abs() < 1e-6);
        }
    }
}
