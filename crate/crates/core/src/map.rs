//! Variational MAP estimation: minimize `I(u) = Phi(u; y) + rho(u) / 2` over
//! truncated wavelet coefficients.
//!
//! The nonsmooth modular is replaced by its `sqrt(lambda^2 + eps^2)` smoothing
//! and minimized by gradient descent with Armijo backtracking, warm-started
//! along a decreasing sequence of `eps`.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::PosteriorHandle;
use crate::error::{invalid, Result};
use crate::modular::ModularEvaluator;
use crate::rng;
use crate::wavelet::{level_factor, Convention, WaveletCoefficients};

/// Smallest smoothing parameter used by the continuation.
pub const FINAL_EPSILON: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSettings {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_gradient_tolerance")]
    pub gradient_tolerance: f64,
    #[serde(default = "default_continuation")]
    pub continuation_factor: f64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_epsilon() -> f64 {
    1e-6
}

fn default_iterations() -> usize {
    20_000
}

fn default_gradient_tolerance() -> f64 {
    1e-8
}

fn default_continuation() -> f64 {
    0.1
}

fn default_restarts() -> usize {
    3
}

impl Default for MapSettings {
    fn default() -> Self {
        MapSettings {
            epsilon: default_epsilon(),
            max_iterations: default_iterations(),
            gradient_tolerance: default_gradient_tolerance(),
            continuation_factor: default_continuation(),
            restarts: default_restarts(),
            seed: 0,
        }
    }
}

impl MapSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return invalid("MAP smoothing epsilon must be positive");
        }
        if !(self.gradient_tolerance > 0.0) {
            return invalid("MAP gradient tolerance must be positive");
        }
        if !(self.continuation_factor > 0.0 && self.continuation_factor < 1.0) {
            return invalid("MAP continuation factor must lie in (0, 1)");
        }
        if self.restarts == 0 {
            return invalid("MAP needs at least one start");
        }
        Ok(())
    }
}

pub struct MapProblem {
    handle: PosteriorHandle,
    settings: MapSettings,
    modular: ModularEvaluator,
    /// `2^{-j/2}` per flat coefficient
    factors: Vec<f64>,
    /// diagonal of the Hessian of `Phi` in `lambda`
    data_curvature: Vec<f64>,
}

impl MapProblem {
    pub fn new(handle: PosteriorHandle, settings: MapSettings) -> Result<Self> {
        settings.validate()?;
        let modular = ModularEvaluator::new(handle.prior().modular_spec()?)?;
        let factors: Vec<f64> = WaveletCoefficients::indices(handle.prior().truncation)
            .iter()
            .map(|idx| 1.0 / level_factor(idx.level))
            .collect();
        let matrix = handle.observation_map().matrix();
        let data_curvature = factors
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let column: Vec<f64> = matrix.column(i).iter().copied().collect();
                let w = handle.setup().whiten(&column);
                f * f * w.iter().map(|v| v * v).sum::<f64>()
            })
            .collect();
        Ok(MapProblem {
            handle,
            settings,
            modular,
            factors,
            data_curvature,
        })
    }

    pub fn handle(&self) -> &PosteriorHandle {
        &self.handle
    }

    pub fn settings(&self) -> &MapSettings {
        &self.settings
    }

    pub fn dimension(&self) -> usize {
        self.factors.len()
    }

    fn lambda(&self, flat: &[f64]) -> Result<WaveletCoefficients> {
        WaveletCoefficients::from_flat(Convention::Lambda, flat)
    }

    fn phi_flat(&self, lambda: &[f64]) -> f64 {
        let u: Vec<f64> = lambda.iter().zip(&self.factors).map(|(l, f)| l * f).collect();
        self.handle
            .potential_from_prediction(&self.handle.observation_map().apply_flat(&u))
    }

    /// `I(u) = Phi(u) + rho(u) / 2`; any convention, levels up to the prior truncation.
    pub fn objective(&self, coeffs: &WaveletCoefficients) -> Result<f64> {
        let lambda = coeffs.to_convention(Convention::Lambda);
        Ok(self.handle.potential(&lambda)? + 0.5 * self.modular.value(&lambda)?)
    }

    /// Smoothed objective and its gradient with respect to flat `lambda`,
    /// using `nodes` Gauss points per dyadic cell.
    pub fn smoothed(&self, lambda: &[f64], epsilon: f64, nodes: usize) -> Result<(f64, Vec<f64>)> {
        let coeffs = self.lambda(lambda)?;
        let (rho, grad_rho) = self.modular.smoothed_value_and_gradient(&coeffs, epsilon, nodes)?;
        let u: Vec<f64> = lambda.iter().zip(&self.factors).map(|(l, f)| l * f).collect();
        let grad_phi = self.handle.potential_gradient_flat(&u);
        let value = self.phi_flat(lambda) + 0.5 * rho;
        let grad = grad_phi
            .iter()
            .zip(&self.factors)
            .zip(grad_rho.to_flat())
            .map(|((g, f), r)| g * f + 0.5 * r)
            .collect();
        Ok((value, grad))
    }

    /// Diagonal of the Hessian of the smoothed objective.
    pub fn curvature(&self, lambda: &[f64], epsilon: f64, nodes: usize) -> Result<Vec<f64>> {
        let rho = self.modular.smoothed_curvature(&self.lambda(lambda)?, epsilon, nodes)?;
        Ok(rho
            .to_flat()
            .iter()
            .zip(&self.data_curvature)
            .map(|(r, d)| 0.5 * r + d)
            .collect())
    }

    /// Node count used by the smoothed objective for descents from `start`.
    pub fn quadrature_nodes(&self, start: &[f64]) -> Result<usize> {
        Ok(self.modular.converged_nodes(&self.lambda(start)?)?.max(16))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContinuationStage {
    pub epsilon: f64,
    pub objective: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MapSolution {
    /// `lambda`-convention minimizer
    #[serde(skip)]
    pub coeffs: WaveletCoefficients,
    /// unsmoothed `I` at the minimizer
    pub i_value: f64,
    pub iterations: usize,
    /// every stage reached the gradient tolerance
    pub converged: bool,
    pub schedule: Vec<ContinuationStage>,
    /// final unsmoothed objective of each start
    pub start_values: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct Descent {
    x: Vec<f64>,
    value: f64,
    iterations: usize,
    gradient_norm: f64,
    converged: bool,
}

/// Gradient descent with Armijo backtracking (halving) in the metric of the
/// diagonal Hessian. The first trial step of each iteration is the
/// Barzilai-Borwein step in that metric when available, otherwise 1.
fn descend(
    problem: &MapProblem,
    start: Vec<f64>,
    epsilon: f64,
    nodes: usize,
    budget: usize,
) -> Result<Descent> {
    let tol = problem.settings.gradient_tolerance;
    let mut x = start;
    let (mut f, mut g) = problem.smoothed(&x, epsilon, nodes)?;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut iterations = 0;
    let finish = |x, f, iterations, gn: f64| Descent {
        x,
        value: f,
        iterations,
        gradient_norm: gn,
        converged: gn < tol,
    };
    while iterations < budget {
        let gn = norm(&g);
        if gn < tol {
            return Ok(finish(x, f, iterations, gn));
        }
        let h = problem.curvature(&x, epsilon, nodes)?;
        let d: Vec<f64> = g.iter().zip(&h).map(|(gi, hi)| -gi / hi.max(1e-300)).collect();
        let slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        let mut t = 1.0;
        if let Some((px, pg)) = &prev {
            let s: Vec<f64> = x.iter().zip(px).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g.iter().zip(pg).map(|(a, b)| a - b).collect();
            let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
            let shs: f64 = s.iter().zip(&h).map(|(a, b)| a * a * b).sum();
            if sy > 0.0 && shs > 0.0 {
                t = shs / sy;
            }
        }
        iterations += 1;
        let floor = 1e-14 * f.abs().max(1.0);
        let mut accepted = None;
        for _ in 0..80 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let (ft, gt) = problem.smoothed(&trial, epsilon, nodes)?;
            // Armijo, or no increase beyond roundoff with a smaller gradient
            if ft <= f + 1e-4 * t * slope || (ft <= f + floor && norm(&gt) < gn) {
                accepted = Some((trial, ft, gt));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, ft, gt)) => {
                prev = Some((std::mem::replace(&mut x, trial), std::mem::replace(&mut g, gt)));
                f = ft;
            }
            // no decrease representable at this precision
            None => return Ok(finish(x, f, iterations, gn)),
        }
    }
    let gn = norm(&g);
    Ok(finish(x, f, iterations, gn))
}

/// `eps`-continuation from one start; returns the final point and schedule.
pub fn solve_from(problem: &MapProblem, start: Vec<f64>) -> Result<MapSolution> {
    if start.len() != problem.dimension() {
        return invalid(format!(
            "start has {} coefficients, expected {}",
            start.len(),
            problem.dimension()
        ));
    }
    let nodes = problem.quadrature_nodes(&start)?;
    let mut x = start;
    let mut eps = problem.settings.epsilon;
    let mut schedule = Vec::new();
    let mut iterations = 0;
    let mut converged = true;
    while eps >= FINAL_EPSILON * (1.0 - 1e-9) {
        let budget = problem.settings.max_iterations.saturating_sub(iterations);
        let d = descend(problem, x, eps, nodes, budget)?;
        iterations += d.iterations;
        converged &= d.converged;
        schedule.push(ContinuationStage {
            epsilon: eps,
            objective: d.value,
            iterations: d.iterations,
            gradient_norm: d.gradient_norm,
        });
        x = d.x;
        eps *= problem.settings.continuation_factor;
    }
    let coeffs = WaveletCoefficients::from_flat(Convention::Lambda, &x)?;
    let i_value = problem.objective(&coeffs)?;
    Ok(MapSolution {
        coeffs,
        i_value,
        iterations,
        converged,
        schedule,
        start_values: vec![i_value],
    })
}

/// Multi-start minimization: the zero vector plus `restarts - 1` random
/// starts; the lowest objective wins. Non-convergence is flagged, not an error.
pub fn solve_map(problem: &MapProblem) -> Result<MapSolution> {
    let dim = problem.dimension();
    let seed = problem.settings.seed;
    let starts: Vec<Vec<f64>> = (0..problem.settings.restarts as u64)
        .map(|r| {
            if r == 0 {
                vec![0.0; dim]
            } else {
                let mut rng = rng::stream(seed, "map", &[r]);
                (0..dim).map(|_| 0.1 * { let z: f64 = StandardNormal.sample(&mut rng); z }).collect::<Vec<f64>>()
            }
        })
        .collect();
    let results = starts
        .into_par_iter()
        .map(|s| solve_from(problem, s))
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = results.iter().map(|r| r.i_value).collect();
    let mut best = results
        .into_iter()
        .min_by(|a, b| a.i_value.total_cmp(&b.i_value))
        .expect("at least one start");
    best.start_values = values;
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub directions: usize,
    pub scales: Vec<f64>,
    /// perturbations that lowered `I` by more than the gradient tolerance
    pub violations: usize,
    /// largest decrease `I(u) - I(u + h d)` observed (negative if none)
    pub worst_decrease: f64,
    /// unit direction achieving the worst decrease, when it is a violation
    pub improving_direction: Option<Vec<f64>>,
    /// `eps * (coefficient count)` at the final smoothing level
    pub smoothing_bias_bound: f64,
}

/// Random unit perturbations at scales `1e-1 ... 1e-4` around `solution`.
pub fn verify_minimizing_sequence(
    problem: &MapProblem,
    solution: &WaveletCoefficients,
    perturbation_count: usize,
) -> Result<VerificationReport> {
    let lambda = solution.to_convention(Convention::Lambda);
    let base = problem.objective(&lambda)?;
    let x = lambda.to_flat();
    let scales = vec![1e-1, 1e-2, 1e-3, 1e-4];
    let tol = problem.settings.gradient_tolerance;
    let results = (0..perturbation_count as u64)
        .into_par_iter()
        .map(|i| -> Result<(f64, Vec<f64>)> {
            let mut rng = rng::stream(problem.settings.seed, "verify", &[i]);
            let d: Vec<f64> = (0..x.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = norm(&d);
            let d: Vec<f64> = d.iter().map(|v| v / n).collect();
            let mut worst = f64::NEG_INFINITY;
            for &h in &scales {
                let p: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + h * b).collect();
                let v = problem.objective(&WaveletCoefficients::from_flat(Convention::Lambda, &p)?)?;
                worst = worst.max(base - v);
            }
            Ok((worst, d))
        })
        .collect::<Result<Vec<_>>>()?;
    let violations = results.iter().filter(|r| r.0 > tol).count();
    let (worst_decrease, dir) = results
        .iter()
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(w, d)| (*w, d.clone()))
        .unwrap_or((f64::NEG_INFINITY, Vec::new()));
    Ok(VerificationReport {
        directions: perturbation_count,
        scales,
        violations,
        worst_decrease,
        improving_direction: (worst_decrease > tol).then_some(dir),
        smoothing_bias_bound: FINAL_EPSILON * x.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exponent::ExponentField;
    use crate::forward::{ForwardModel, ObservationSetup};
    use crate::prior::PriorSpec;

    fn problem(q: ExponentField, data: Vec<f64>, settings: MapSettings) -> MapProblem {
        let prior = PriorSpec::new(ExponentField::constant(1.5), q, 1.0, 3, 2).unwrap();
        let k = data.len();
        let setup = ObservationSetup::isotropic((0..k).map(|i| (i as f64 + 0.5) / k as f64).collect(), 0.01).unwrap();
        let handle = PosteriorHandle::new(prior, ForwardModel::heat(0.005, 64).unwrap(), setup, data).unwrap();
        MapProblem::new(handle, settings).unwrap()
    }

    #[test]
    fn objective_at_zero() {
        let p = problem(ExponentField::constant(2.0), vec![0.0; 4], MapSettings::default());
        let z = WaveletCoefficients::zeros(3, Convention::Lambda);
        assert_eq!(p.objective(&z).unwrap(), 0.0);
        let p = problem(ExponentField::constant(2.0), vec![0.5, -0.1, 0.2, 0.0], MapSettings::default());
        // Phi(0; y) = |Wy|^2/2 - |Wy|^2/2
        assert_eq!(p.objective(&z).unwrap(), 0.0);
        let mut c = z.clone();
        c.set_scaling(0.1);
        let exact = p.handle().potential(&c).unwrap() + 0.5 * 0.01;
        assert!((p.objective(&c).unwrap() - exact).abs() < 1e-14);
    }

    #[test]
    fn zero_data_gives_zero_minimizer() {
        let p = problem(ExponentField::cosine(1.5, 0.3), vec![0.0; 4], MapSettings::default());
        let sol = solve_map(&p).unwrap();
        assert!(norm(&sol.coeffs.to_flat()) <= 1e-6, "{:?}", sol.coeffs.to_flat());
        assert_eq!(sol.start_values.len(), 3);
    }

    #[test]
    fn continuation_is_nonincreasing() {
        let p = problem(ExponentField::cosine(1.5, 0.3), vec![0.5, -0.1, 0.2, 0.3], MapSettings::default());
        let sol = solve_map(&p).unwrap();
        assert_eq!(sol.schedule.len(), 5);
        for w in sol.schedule.windows(2) {
            assert!(w[1].objective <= w[0].objective + 1e-12, "{:?}", sol.schedule);
        }
    }

    #[test]
    fn gradient_matches_difference() {
        let p = problem(ExponentField::cosine(1.5, 0.4), vec![0.5, -0.1, 0.2, 0.3], MapSettings::default());
        let mut rng = rng::stream(8, "test", &[]);
        for _ in 0..5 {
            let x: Vec<f64> = (0..16).map(|_| 0.3 * { let z: f64 = StandardNormal.sample(&mut rng); z }).collect::<Vec<f64>>();
            let (_, g) = p.smoothed(&x, 1e-3, 16).unwrap();
            for d in 0..16 {
                let h = 1e-6;
                let mut up = x.clone();
                let mut dn = x.clone();
                up[d] += h;
                dn[d] -= h;
                let fd = (p.smoothed(&up, 1e-3, 16).unwrap().0 - p.smoothed(&dn, 1e-3, 16).unwrap().0) / (2.0 * h);
                assert!((fd - g[d]).abs() <= 1e-5 * g[d].abs().max(1.0), "{d}: {fd} vs {}", g[d]);
            }
        }
    }

    #[test]
    fn truncated_run_reports_violations() {
        let data = vec![0.5, -0.1, 0.2, 0.3];
        let p = problem(
            ExponentField::constant(2.0),
            data.clone(),
            MapSettings {
                max_iterations: 1,
                restarts: 1,
                ..MapSettings::default()
            },
        );
        let sol = solve_map(&p).unwrap();
        assert!(!sol.converged);
        let report = verify_minimizing_sequence(&p, &sol.coeffs, 100).unwrap();
        assert!(report.violations > 0);
        assert!(report.improving_direction.is_some());

        let p = problem(ExponentField::constant(2.0), data, MapSettings::default());
        let sol = solve_map(&p).unwrap();
        assert!(sol.converged);
        let report = verify_minimizing_sequence(&p, &sol.coeffs, 100).unwrap();
        assert_eq!(report.violations, 0, "{report:?}");
    }

    #[test]
    fn settings_validation() {
        let bad = MapSettings {
            continuation_factor: 1.0,
            ..MapSettings::default()
        };
        assert!(bad.validate().is_err());
    }
}
