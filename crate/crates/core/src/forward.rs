//! Spectral forward maps on the 1-torus: the heat semigroup `e^{-tA}` and the
//! fractional propagator `E_alpha(-t^alpha A)` with `A = (-Laplacian)^beta`,
//! point observations, and a Mittag-Leffler evaluator.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Error, Result};
use crate::quadrature::GaussLegendre;
use crate::wavelet::{Convention, SpectralBasis, WaveletCoefficients, WaveletFamily};

/// Spatial dimension; only the 1-torus is implemented.
pub const DIMENSION: usize = 1;

/// Default accuracy of the Mittag-Leffler values behind the multipliers.
pub const ML_TOLERANCE: f64 = 1e-14;

// ---------------------------------------------------------------------------
// Mittag-Leffler

/// `E_alpha(z)` for `z <= 0`, `0 < alpha <= 1`, to absolute accuracy `tol`.
///
/// Uses the algebraic asymptotic expansion when its truncation error is below
/// `tol`, else the power series when its roundoff bound is below `tol`, else a
/// Laplace-type integral representation. `alpha = 1` returns `exp(z)`.
pub fn mittag_leffler(alpha: f64, z: f64, tol: f64) -> Result<f64> {
    check_ml_args(alpha, z, tol)?;
    if z == 0.0 {
        return Ok(1.0);
    }
    if alpha == 1.0 {
        return Ok(z.exp());
    }
    let value = if let Some(v) = ml_asymptotic(alpha, -z, tol) {
        v
    } else if let Some(v) = ml_series(alpha, -z, tol) {
        v
    } else {
        ml_integral(alpha, -z, tol)
    };
    Ok(value.clamp(0.0, 1.0))
}

fn check_ml_args(alpha: f64, z: f64, tol: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return invalid(format!("Mittag-Leffler order must lie in (0, 1], got {alpha}"));
    }
    if !(tol > 0.0) {
        return invalid(format!("Mittag-Leffler tolerance must be positive, got {tol}"));
    }
    if !(z <= 0.0) {
        return invalid(format!("Mittag-Leffler argument must be nonpositive, got {z}"));
    }
    Ok(())
}

/// `sin(pi y)`, exactly zero at integers.
fn sin_pi(y: f64) -> f64 {
    let r = y.rem_euclid(2.0);
    if r.fract() == 0.0 {
        0.0
    } else {
        (PI * r).sin()
    }
}

/// Power series `sum (-x)^k / Gamma(alpha k + 1)` with compensated summation.
/// `None` when the roundoff bound exceeds `tol`.
pub fn ml_series(alpha: f64, x: f64, tol: f64) -> Option<f64> {
    if x == 0.0 {
        return Some(1.0);
    }
    let lx = x.ln();
    let mut sum = 0.0;
    let mut comp = 0.0;
    let mut abs_sum = 0.0;
    let mut prev = f64::INFINITY;
    for k in 0..100_000usize {
        let mag = (k as f64 * lx - ln_gamma(alpha * k as f64 + 1.0)).exp();
        let term = if k % 2 == 0 { mag } else { -mag };
        // Kahan
        let y = term - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        abs_sum += mag;
        if abs_sum * 4.0 * f64::EPSILON > tol {
            return None;
        }
        if mag < prev && mag <= 0.1 * tol * sum.abs().max(f64::MIN_POSITIVE) && mag < 0.1 * tol {
            return Some(sum);
        }
        prev = mag;
    }
    None
}

/// `sum_{k>=1} (-1)^{k+1} x^{-k} / Gamma(1 - alpha k)`, truncated at the
/// smallest term. `None` when the error estimate exceeds `tol`.
pub fn ml_asymptotic(alpha: f64, x: f64, tol: f64) -> Option<f64> {
    if x <= 1.0 || alpha >= 1.0 {
        return None;
    }
    // remainder not captured by the algebraic series, of order e^{-x^{1/alpha}}
    let beyond = (-x.powf(1.0 / alpha)).exp() / (PI * sin_pi(alpha)).max(f64::MIN_POSITIVE);
    if beyond > 0.5 * tol {
        return None;
    }
    let lx = x.ln();
    let mut sum = 0.0;
    let mut last = f64::INFINITY;
    for k in 1..400usize {
        let ak = alpha * k as f64;
        let s = sin_pi(ak);
        if s == 0.0 {
            continue;
        }
        let mag = (ln_gamma(ak) - k as f64 * lx).exp() * s.abs() / PI;
        if mag < 0.5 * tol {
            return Some(sum);
        }
        if mag > last {
            return None;
        }
        last = mag;
        // (-1)^{k+1} sin(pi alpha k) Gamma(alpha k) x^{-k} / pi
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 } * s.signum();
        sum += sign * mag;
    }
    None
}

/// `E_alpha(-x) = int_0^inf e^{-r x^{1/alpha}} K_alpha(r) dr`, with
/// `K_alpha(r) = sin(alpha pi) r^{alpha-1} / (pi (r^{2 alpha} + 2 r^alpha cos(alpha pi) + 1))`,
/// valid for `0 < alpha < 1`.
pub fn ml_integral(alpha: f64, x: f64, tol: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    let t = x.powf(1.0 / alpha);
    let (sa, ca) = (sin_pi(alpha), (PI * alpha).cos());
    // substitute r = e^v / t
    let f = |v: f64| {
        let w = v.exp();
        let r = w / t;
        let ra = r.powf(alpha);
        // (r^a + cos)^2 + sin^2 avoids cancellation near r = 1 when alpha -> 1
        let k = sa * ra / (r * PI * ((ra + ca).powi(2) + sa * sa));
        (-w).exp() * k * r
    };
    let lo = (tol.min(1e-3) * 1e-3).ln() / alpha - t.ln().max(0.0);
    let hi = 60f64.ln();
    let rule = GaussLegendre::new(10);
    let panels = 96;
    let h = (hi - lo) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let a = lo + p as f64 * h;
        total += adaptive_panel(&f, &rule, a, a + h, 0.1 * tol / panels as f64, 40);
    }
    total
}

fn panel(f: &impl Fn(f64) -> f64, rule: &GaussLegendre, a: f64, b: f64) -> f64 {
    let w = b - a;
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&x, &wt)| wt * f(a + w * x))
        .sum::<f64>()
        * w
}

fn adaptive_panel(f: &impl Fn(f64) -> f64, rule: &GaussLegendre, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let whole = panel(f, rule, a, b);
    let split = panel(f, rule, a, m) + panel(f, rule, m, b);
    // the integrand is positive, so below this the difference is roundoff
    let floor = 32.0 * f64::EPSILON * split.abs();
    if depth == 0 || (whole - split).abs() <= tol.max(floor).max(1e-300) {
        split
    } else {
        adaptive_panel(f, rule, a, m, 0.5 * tol, depth - 1) + adaptive_panel(f, rule, m, b, 0.5 * tol, depth - 1)
    }
}

// ---------------------------------------------------------------------------
// Forward model

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForwardKind {
    Heat,
    Fractional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardParams {
    pub kind: ForwardKind,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default = "one", alias = "t")]
    pub time: f64,
    #[serde(default = "default_cutoff")]
    pub cutoff_modes: usize,
}

fn one() -> f64 {
    1.0
}

fn default_cutoff() -> usize {
    128
}

/// A diagonal propagator in the Fourier basis with its mode multipliers.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "ForwardParams", into = "ForwardParams")]
pub struct ForwardModel {
    params: ForwardParams,
    multipliers: Arc<Vec<f64>>,
}

impl PartialEq for ForwardModel {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
    }
}

impl TryFrom<ForwardParams> for ForwardModel {
    type Error = Error;

    fn try_from(p: ForwardParams) -> Result<Self> {
        ForwardModel::new(p)
    }
}

impl From<ForwardModel> for ForwardParams {
    fn from(m: ForwardModel) -> Self {
        m.params
    }
}

type CacheKey = (ForwardKind, u64, u64, u64, usize);

fn multiplier_cache() -> &'static Mutex<HashMap<CacheKey, Arc<Vec<f64>>>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<Vec<f64>>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Checks the fractional well-posedness gate `beta > n/4`.
pub fn check_beta_gate(beta: f64) -> Result<()> {
    let gate = DIMENSION as f64 / 4.0;
    if beta > gate {
        Ok(())
    } else {
        invalid(format!(
            "fractional model needs beta > n/4 = {gate} (n = {DIMENSION}), got beta = {beta}"
        ))
    }
}

impl ForwardModel {
    pub fn new(mut params: ForwardParams) -> Result<Self> {
        if !(params.time > 0.0) || !params.time.is_finite() {
            return invalid(format!("forward time must be positive, got {}", params.time));
        }
        if params.cutoff_modes < 1 {
            return invalid("cutoff_modes must be at least 1");
        }
        match params.kind {
            ForwardKind::Heat => {
                params.alpha = 1.0;
                params.beta = 1.0;
            }
            ForwardKind::Fractional => {
                if !(params.alpha > 0.0 && params.alpha <= 1.0) {
                    return invalid(format!("fractional alpha must lie in (0, 1], got {}", params.alpha));
                }
                if !(params.beta <= 1.0) {
                    return invalid(format!("fractional beta must be at most 1, got {}", params.beta));
                }
                check_beta_gate(params.beta)?;
            }
        }
        let key = (
            params.kind,
            params.alpha.to_bits(),
            params.beta.to_bits(),
            params.time.to_bits(),
            params.cutoff_modes,
        );
        let cached = multiplier_cache().lock().expect("multiplier cache").get(&key).cloned();
        let multipliers = match cached {
            Some(m) => m,
            None => {
                let m = Arc::new(
                    (0..=params.cutoff_modes)
                        .map(|k| mode_multiplier(&params, k))
                        .collect::<Result<Vec<f64>>>()?,
                );
                multiplier_cache().lock().expect("multiplier cache").insert(key, m.clone());
                m
            }
        };
        Ok(ForwardModel { params, multipliers })
    }

    pub fn heat(time: f64, cutoff_modes: usize) -> Result<Self> {
        Self::new(ForwardParams {
            kind: ForwardKind::Heat,
            alpha: 1.0,
            beta: 1.0,
            time,
            cutoff_modes,
        })
    }

    pub fn fractional(alpha: f64, beta: f64, time: f64, cutoff_modes: usize) -> Result<Self> {
        Self::new(ForwardParams {
            kind: ForwardKind::Fractional,
            alpha,
            beta,
            time,
            cutoff_modes,
        })
    }

    pub fn params(&self) -> &ForwardParams {
        &self.params
    }

    pub fn kind(&self) -> ForwardKind {
        self.params.kind
    }

    pub fn alpha(&self) -> f64 {
        self.params.alpha
    }

    pub fn beta(&self) -> f64 {
        self.params.beta
    }

    pub fn time(&self) -> f64 {
        self.params.time
    }

    pub fn cutoff_modes(&self) -> usize {
        self.params.cutoff_modes
    }

    pub fn with_time(&self, time: f64) -> Result<Self> {
        Self::new(ForwardParams {
            time,
            ..self.params.clone()
        })
    }

    /// Multiplier of modes `0..=cutoff_modes`.
    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }

    /// Multiplier of mode `k` (zero beyond the cutoff).
    pub fn multiplier(&self, k: usize) -> f64 {
        self.multipliers.get(k).copied().unwrap_or(0.0)
    }
}

/// `(2 pi k)^{2 beta}`, the eigenvalue of `A` on mode `k`.
pub fn eigenvalue(k: usize, beta: f64) -> f64 {
    (TAU * k as f64).powf(2.0 * beta)
}

fn mode_multiplier(p: &ForwardParams, k: usize) -> Result<f64> {
    match p.kind {
        ForwardKind::Heat => Ok((-(TAU * k as f64).powi(2) * p.time).exp()),
        ForwardKind::Fractional => {
            mittag_leffler(p.alpha, -eigenvalue(k, p.beta) * p.time.powf(p.alpha), ML_TOLERANCE)
        }
    }
}

// ---------------------------------------------------------------------------
// Spectra

/// Fourier coefficients `c_0..=c_K` of a real function on the torus;
/// negative modes are the conjugates.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    modes: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(modes: Vec<Complex64>) -> Self {
        Spectrum { modes }
    }

    pub fn modes(&self) -> &[Complex64] {
        &self.modes
    }

    pub fn max_mode(&self) -> usize {
        self.modes.len().saturating_sub(1)
    }

    /// DFT of grid samples `f(i/n)`, keeping modes `k <= min(cutoff, n/2)`.
    /// The Nyquist coefficient is halved so that both signs share it.
    pub fn from_grid(values: &[f64], cutoff: usize) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return invalid("empty grid");
        }
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let kmax = cutoff.min(n / 2);
        let mut modes: Vec<Complex64> = buf[..=kmax].iter().map(|c| c / n as f64).collect();
        if n % 2 == 0 && kmax == n / 2 && n > 1 {
            modes[kmax] *= 0.5;
        }
        Ok(Spectrum { modes })
    }

    /// Exact Fourier coefficients of a wavelet expansion up to `cutoff`.
    pub fn from_coefficients(coeffs: &WaveletCoefficients, basis: &SpectralBasis, cutoff: usize) -> Result<Self> {
        let u = coeffs.to_convention(Convention::U);
        if u.max_level() > basis.max_level() || cutoff > basis.max_mode() {
            return invalid("spectral basis too small for the requested expansion");
        }
        let mut modes = vec![Complex64::new(0.0, 0.0); cutoff + 1];
        for (k, c) in modes.iter_mut().enumerate() {
            *c = u.scaling() * basis.scaling_symbol(k);
        }
        let mut planner = FftPlanner::new();
        for (j, level) in u.levels().iter().enumerate() {
            let len = level.len();
            let mut d: Vec<Complex64> = level.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            planner.plan_fft_forward(len).process(&mut d);
            let scale = (-0.5 * j as f64).exp2();
            for (k, c) in modes.iter_mut().enumerate() {
                *c += basis.level_symbol(j, k) * d[k % len] * scale;
            }
        }
        Ok(Spectrum { modes })
    }

    /// Value at `x`: `c_0 + 2 Re sum_{k>=1} c_k e^{2 pi i k x}`.
    pub fn evaluate(&self, x: f64) -> f64 {
        let mut acc = self.modes.first().map_or(0.0, |c| c.re);
        for (k, c) in self.modes.iter().enumerate().skip(1) {
            let phase = TAU * ((k as f64 * x).rem_euclid(1.0));
            acc += 2.0 * (c * Complex64::from_polar(1.0, phase)).re;
        }
        acc
    }

    /// Samples on the grid `i/n` by inverse FFT (aliased modes fold).
    pub fn to_grid(&self, n: usize) -> Result<Vec<f64>> {
        if n == 0 {
            return invalid("empty grid");
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (k, c) in self.modes.iter().enumerate() {
            buf[k % n] += c;
            if k > 0 {
                buf[(n - k % n) % n] += c.conj();
            }
        }
        FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
        Ok(buf.iter().map(|c| c.re).collect())
    }

    pub fn scale(&self, a: f64) -> Self {
        Spectrum {
            modes: self.modes.iter().map(|c| c * a).collect(),
        }
    }
}

/// Multiplies each mode by the model multiplier; modes beyond the cutoff are dropped.
pub fn propagate(input: &Spectrum, model: &ForwardModel) -> Spectrum {
    let kmax = input.max_mode().min(model.cutoff_modes());
    Spectrum {
        modes: input.modes[..=kmax]
            .iter()
            .enumerate()
            .map(|(k, c)| c * model.multiplier(k))
            .collect(),
    }
}

/// Propagates grid samples `u(i/n)` and returns grid samples of `G(u)`.
pub fn propagate_grid(values: &[f64], model: &ForwardModel) -> Result<Vec<f64>> {
    let spec = Spectrum::from_grid(values, model.cutoff_modes())?;
    propagate(&spec, model).to_grid(values.len())
}

/// Propagates a wavelet expansion through its exact Fourier coefficients.
pub fn propagate_coefficients(coeffs: &WaveletCoefficients, family: &WaveletFamily, model: &ForwardModel) -> Result<Spectrum> {
    let basis = SpectralBasis::new(family, coeffs.max_level(), model.cutoff_modes());
    Ok(propagate(&Spectrum::from_coefficients(coeffs, &basis, model.cutoff_modes())?, model))
}

// ---------------------------------------------------------------------------
// Observations

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointSpec {
    List(Vec<f64>),
    Equispaced { equispaced: usize },
}

impl PointSpec {
    pub fn resolve(&self) -> Vec<f64> {
        match self {
            PointSpec::List(p) => p.clone(),
            PointSpec::Equispaced { equispaced } => (0..*equispaced).map(|i| i as f64 / *equispaced as f64).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CovarianceSpec {
    Isotropic { variance: f64 },
    Diagonal { variances: Vec<f64> },
    Full { matrix: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationParams {
    pub points: PointSpec,
    pub noise: CovarianceSpec,
}

/// Observation points and noise covariance, stored with its Cholesky factor.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "ObservationParams", into = "ObservationParams")]
pub struct ObservationSetup {
    points: Vec<f64>,
    gamma: DMatrix<f64>,
    cholesky: DMatrix<f64>,
    params: ObservationParams,
}

impl PartialEq for ObservationSetup {
    fn eq(&self, other: &Self) -> bool {
        self.points == other.points && self.gamma == other.gamma
    }
}

impl TryFrom<ObservationParams> for ObservationSetup {
    type Error = Error;

    fn try_from(p: ObservationParams) -> Result<Self> {
        let points = p.points.resolve();
        let k = points.len();
        let gamma = match &p.noise {
            CovarianceSpec::Isotropic { variance } => DMatrix::from_diagonal_element(k, k, *variance),
            CovarianceSpec::Diagonal { variances } => {
                if variances.len() != k {
                    return invalid(format!("{} variances for {k} points", variances.len()));
                }
                DMatrix::from_diagonal(&DVector::from_column_slice(variances))
            }
            CovarianceSpec::Full { matrix } => {
                if matrix.len() != k || matrix.iter().any(|r| r.len() != k) {
                    return invalid(format!("covariance must be {k}x{k}"));
                }
                DMatrix::from_fn(k, k, |i, j| matrix[i][j])
            }
        };
        Self::build(points, gamma, p)
    }
}

impl From<ObservationSetup> for ObservationParams {
    fn from(s: ObservationSetup) -> Self {
        s.params
    }
}

impl ObservationSetup {
    pub fn new(points: Vec<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        let params = ObservationParams {
            points: PointSpec::List(points.clone()),
            noise: CovarianceSpec::Full {
                matrix: gamma.row_iter().map(|r| r.iter().copied().collect()).collect(),
            },
        };
        Self::build(points, gamma, params)
    }

    pub fn isotropic(points: Vec<f64>, variance: f64) -> Result<Self> {
        ObservationParams {
            points: PointSpec::List(points),
            noise: CovarianceSpec::Isotropic { variance },
        }
        .try_into()
    }

    pub fn diagonal(points: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        ObservationParams {
            points: PointSpec::List(points),
            noise: CovarianceSpec::Diagonal { variances },
        }
        .try_into()
    }

    fn build(points: Vec<f64>, gamma: DMatrix<f64>, params: ObservationParams) -> Result<Self> {
        if points.is_empty() {
            return invalid("observation setup needs at least one point");
        }
        if let Some(p) = points.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return invalid(format!("observation point {p} outside [0, 1)"));
        }
        let k = points.len();
        if gamma.nrows() != k || gamma.ncols() != k {
            return invalid(format!("covariance must be {k}x{k}"));
        }
        if (&gamma - gamma.transpose()).amax() > 1e-12 * gamma.amax() {
            return invalid("covariance must be symmetric");
        }
        let chol = gamma.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        Ok(ObservationSetup {
            points,
            cholesky: chol.l(),
            gamma,
            params,
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    /// Lower Cholesky factor `L` with `Gamma = L L^T`.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.cholesky
    }

    /// `L^{-1} r`, so that `|whiten(r)|^2 = r^T Gamma^{-1} r`.
    pub fn whiten(&self, r: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(r);
        self.cholesky
            .solve_lower_triangular(&v)
            .expect("Cholesky factor is nonsingular")
            .iter()
            .copied()
            .collect()
    }

    /// `L z` for standard normal `z`.
    pub fn sample_noise(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let z = DVector::from_fn(self.len(), |_, _| StandardNormal.sample(rng));
        (&self.cholesky * z).iter().copied().collect()
    }
}

/// Exact trigonometric evaluation of the spectrum at the observation points.
pub fn observe(v: &Spectrum, setup: &ObservationSetup) -> Vec<f64> {
    setup.points.iter().map(|&x| v.evaluate(x)).collect()
}

/// `y = observe(propagate(u)) + Gamma^{1/2} z`.
pub fn simulate_data(u_true: &Spectrum, model: &ForwardModel, setup: &ObservationSetup, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let clean = observe(&propagate(u_true, model), setup);
    let noise = setup.sample_noise(rng);
    clean.iter().zip(noise).map(|(a, b)| a + b).collect()
}

/// The linear map from `u`-convention wavelet coefficients (flat order) up to
/// a fixed level to observations `l(G(u))`, as a dense `K x D` matrix.
#[derive(Clone, Debug)]
pub struct ObservationMap {
    matrix: DMatrix<f64>,
    max_level: usize,
}

impl ObservationMap {
    pub fn new(model: &ForwardModel, setup: &ObservationSetup, family: &WaveletFamily, max_level: usize) -> Self {
        let cutoff = model.cutoff_modes();
        let basis = SpectralBasis::new(family, max_level, cutoff);
        let points = setup.points();
        let dim = 2usize << max_level;
        let mut matrix = DMatrix::zeros(points.len(), dim);
        // e^{2 pi i k x_i} times the multiplier, shared by all columns
        let waves: Vec<Vec<Complex64>> = points
            .iter()
            .map(|&x| {
                (0..=cutoff)
                    .map(|k| Complex64::from_polar(model.multiplier(k), TAU * (k as f64 * x).rem_euclid(1.0)))
                    .collect()
            })
            .collect();
        let real_part = |coef: &dyn Fn(usize) -> Complex64, wave: &[Complex64]| -> f64 {
            let mut acc = (coef(0) * wave[0]).re;
            for (k, w) in wave.iter().enumerate().skip(1) {
                acc += 2.0 * (coef(k) * w).re;
            }
            acc
        };
        for (i, wave) in waves.iter().enumerate() {
            matrix[(i, 0)] = real_part(&|k| basis.scaling_symbol(k), wave);
        }
        let mut col = 1;
        for j in 0..=max_level {
            let len = 1usize << j;
            let scale = (-0.5 * j as f64).exp2();
            for m in 0..len {
                for (i, wave) in waves.iter().enumerate() {
                    matrix[(i, col)] = real_part(
                        &|k| {
                            let phase = -TAU * ((k * m) % len) as f64 / len as f64;
                            basis.level_symbol(j, k) * Complex64::from_polar(scale, phase)
                        },
                        wave,
                    );
                }
                col += 1;
            }
        }
        ObservationMap { matrix, max_level }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    /// `l(G(u))` for coefficients of any convention with level at most `max_level`.
    pub fn apply(&self, coeffs: &WaveletCoefficients) -> Result<Vec<f64>> {
        if coeffs.max_level() > self.max_level {
            return Err(Error::LevelMismatch(format!(
                "coefficients reach level {} but the observation map stops at {}",
                coeffs.max_level(),
                self.max_level
            )));
        }
        let u = coeffs.to_convention(Convention::U).to_flat();
        Ok(self.apply_flat(&u))
    }

    /// Applies the map to a `u`-convention flat prefix (missing entries are zero).
    pub fn apply_flat(&self, u: &[f64]) -> Vec<f64> {
        (0..self.matrix.nrows())
            .map(|i| u.iter().enumerate().map(|(d, v)| self.matrix[(i, d)] * v).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    

    #[test]
    fn ml_basic_values() {
        assert_eq!(mittag_leffler(0.3, 0.0, 1e-12).unwrap(), 1.0);
        assert!((mittag_leffler(1.0, -1.0, 1e-12).unwrap() - (-1f64).exp()).abs() < 1e-15);
        assert!(mittag_leffler(0.0, -1.0, 1e-12).is_err());
        assert!(mittag_leffler(1.2, -1.0, 1e-12).is_err());
        assert!(mittag_leffler(0.5, -1.0, 0.0).is_err());
        assert!(mittag_leffler(0.5, 1.0, 1e-12).is_err());
    }

    #[test]
    fn regimes_agree() {
        let mut compared = 0;
        for &alpha in &[0.3, 0.5, 0.75, 0.9] {
            for &x in &[0.1, 0.5, 1.0, 2.0, 3.0] {
                let i = ml_integral(alpha, x, 1e-13);
                match ml_series(alpha, x, 1e-12) {
                    Some(s) => {
                        compared += 1;
                        assert!((s - i).abs() < 1e-11, "alpha={alpha} x={x}: {s} vs {i}");
                    }
                    None => assert!(x.powf(1.0 / alpha) > 5.0),
                }
            }
            for &x in &[50.0, 200.0, 1e4] {
                if let Some(a) = ml_asymptotic(alpha, x, 1e-12) {
                    let i = ml_integral(alpha, x, 1e-13);
                    compared += 1;
                    assert!((a - i).abs() < 1e-11, "alpha={alpha} x={x}: {a} vs {i}");
                }
            }
        }
        assert!(compared >= 20, "{compared}");
    }

    #[test]
    fn ml_is_decreasing_along_negative_axis() {
        for &alpha in &[0.25, 0.5, 0.8, 0.95] {
            let mut prev = 1.0;
            for i in 1..200 {
                let x = 0.05 * (i as f64).powf(1.7);
                let v = mittag_leffler(alpha, -x, 1e-13).unwrap();
                assert!(v < prev && v > 0.0, "alpha={alpha} x={x}: {v} !< {prev}");
                prev = v;
            }
        }
    }

    #[test]
    fn heat_eigenfunction() {
        let model = ForwardModel::heat(0.01, 64).unwrap();
        let n = 256;
        let u: Vec<f64> = (0..n).map(|i| (TAU * i as f64 / n as f64).cos()).collect();
        let v = propagate_grid(&u, &model).unwrap();
        let f = (-4.0 * PI * PI * 0.01f64).exp();
        assert!((f - 0.6738254512).abs() < 1e-10);
        for (a, b) in u.iter().zip(&v) {
            assert!((a * f - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fractional_gate_and_reduction() {
        assert!(ForwardModel::fractional(0.5, 0.25, 1.0, 8).is_err());
        assert!(ForwardModel::fractional(0.5, 0.2, 1.0, 8).is_err());
        assert!(ForwardModel::fractional(0.5, 0.26, 1.0, 8).is_ok());
        let heat = ForwardModel::heat(0.003, 64).unwrap();
        let frac = ForwardModel::fractional(1.0, 1.0, 0.003, 64).unwrap();
        for k in 0..=64 {
            assert!((heat.multiplier(k) - frac.multiplier(k)).abs() < 1e-10);
        }
        assert_eq!(frac.multiplier(0), 1.0);
    }

    #[test]
    fn observation_examples() {
        let n = 64;
        let u: Vec<f64> = (0..n).map(|i| (TAU * i as f64 / n as f64).cos()).collect();
        let spec = Spectrum::from_grid(&u, 16).unwrap();
        let setup = ObservationSetup::isotropic(vec![0.0, 0.25, 0.5], 1.0).unwrap();
        let y = observe(&spec, &setup);
        assert!((y[0] - 1.0).abs() < 1e-14 && y[1].abs() < 1e-14 && (y[2] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn observation_map_matches_spectral_path() {
        let fam = WaveletFamily::daubechies(4).unwrap();
        let model = ForwardModel::heat(0.002, 96).unwrap();
        let setup = ObservationSetup::isotropic(vec![0.05, 0.3, 0.61, 0.9], 0.1).unwrap();
        let map = ObservationMap::new(&model, &setup, &fam, 4);
        let mut r = rng::stream(1, "test", &[]);
        let flat: Vec<f64> = (0..32).map(|_| StandardNormal.sample(&mut r)).collect();
        let coeffs = WaveletCoefficients::from_flat(Convention::U, &flat).unwrap();
        let direct = observe(&propagate_coefficients(&coeffs, &fam, &model).unwrap(), &setup);
        let via = map.apply(&coeffs).unwrap();
        for (a, b) in direct.iter().zip(&via) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(map.apply(&WaveletCoefficients::zeros(5, Convention::U)).is_err());
    }

    #[test]
    fn coefficient_spectrum_matches_basis_sum() {
        let fam = WaveletFamily::daubechies(6).unwrap();
        let mut r = rng::stream(2, "test", &[]);
        let flat: Vec<f64> = (0..16).map(|_| StandardNormal.sample(&mut r)).collect();
        let coeffs = WaveletCoefficients::from_flat(Convention::U, &flat).unwrap();
        let basis = SpectralBasis::new(&fam, 3, 40);
        let fast = Spectrum::from_coefficients(&coeffs, &basis, 40).unwrap();
        let indices = WaveletCoefficients::indices(3);
        for k in 0..=40 {
            let direct: Complex64 = indices.iter().zip(&flat).map(|(&idx, &u)| basis.coefficient(idx, k) * u).sum();
            assert!((fast.modes()[k] - direct).norm() < 1e-13, "k={k}");
        }
    }

    #[test]
    fn grid_spectrum_roundtrip() {
        let n = 64;
        let mut r = rng::stream(4, "test", &[]);
        let u: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let spec = Spectrum::from_grid(&u, n).unwrap();
        let back = spec.to_grid(n).unwrap();
        for i in 0..n {
            assert!((back[i] - u[i]).abs() < 1e-12);
            assert!((spec.evaluate(i as f64 / n as f64) - u[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_limit_and_determinism() {
        let model = ForwardModel::heat(0.01, 32).unwrap();
        let setup = ObservationSetup::isotropic(vec![0.1, 0.2], 1e-30).unwrap();
        let u = Spectrum::new(vec![Complex64::new(0.3, 0.0), Complex64::new(0.2, -0.1)]);
        let clean = observe(&propagate(&u, &model), &setup);
        let y = simulate_data(&u, &model, &setup, &mut rng::stream(3, "noise", &[]));
        for (a, b) in clean.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
        let setup = ObservationSetup::isotropic(vec![0.1, 0.2], 0.5).unwrap();
        let a = simulate_data(&u, &model, &setup, &mut rng::stream(3, "noise", &[]));
        let b = simulate_data(&u, &model, &setup, &mut rng::stream(3, "noise", &[]));
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_covariance() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(ObservationSetup::new(vec![0.1, 0.2], bad), Err(Error::NotPositiveDefinite)));
        assert!(ObservationSetup::isotropic(vec![1.0], 1.0).is_err());
    }

    #[test]
    fn config_roundtrip() {
        let json = r#"{"kind": "fractional", "alpha": 0.5, "beta": 0.75, "t": 0.02, "cutoff_modes": 16}"#;
        let m: ForwardModel = serde_json::from_str(json).unwrap();
        assert_eq!(m.alpha(), 0.5);
        assert_eq!(m.time(), 0.02);
        let back: ForwardModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        let bad = r#"{"kind": "fractional", "alpha": 0.5, "beta": 0.2}"#;
        assert!(serde_json::from_str::<ForwardModel>(bad).is_err());
        let obs = r#"{"points": {"equispaced": 4}, "noise": {"kind": "isotropic", "variance": 0.01}}"#;
        let s: ObservationSetup = serde_json::from_str(obs).unwrap();
        assert_eq!(s.points(), &[0.0, 0.25, 0.5, 0.75]);
    }
}
