//! Variable-index Besov modular and its Luxemburg norm.
//!
//! For coefficients in the `lambda` convention,
//!
//! `rho(u) = sum_j sum_G sum_m int_{Q_jm} 2^{j q(x) s(2^-j m)} |lambda_Gm^j|^{q(x)} dx`
//!
//! with dyadic cells `Q_jm = [2^-j m, 2^-j (m + 1))`. Each cell integral uses a
//! Gauss-Legendre rule; the node count doubles until two successive totals
//! agree to the target tolerance.

use std::collections::HashMap;
use std::f64::consts::LN_2;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::exponent::ExponentField;
use crate::quadrature::{mean_stderr, pairwise_sum, GaussLegendre};
use crate::wavelet::{Convention, WaveletCoefficients};

const MAX_NODES_PER_CELL: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModularSpec {
    pub s: ExponentField,
    pub q: ExponentField,
    #[serde(default = "default_nodes")]
    pub quadrature_nodes_per_cell: usize,
    #[serde(default = "default_tolerance")]
    pub target_tolerance: f64,
}

fn default_nodes() -> usize {
    4
}

fn default_tolerance() -> f64 {
    1e-8
}

impl ModularSpec {
    pub fn new(s: ExponentField, q: ExponentField) -> Result<Self> {
        let spec = ModularSpec {
            s,
            q,
            quadrature_nodes_per_cell: default_nodes(),
            target_tolerance: default_tolerance(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.q.lower_bound() < 1.0 {
            return invalid(format!(
                "modular needs q^- >= 1, got {}",
                self.q.lower_bound()
            ));
        }
        if self.quadrature_nodes_per_cell == 0 {
            return invalid("quadrature_nodes_per_cell must be at least 1");
        }
        if !(self.target_tolerance > 0.0) {
            return invalid("target_tolerance must be positive");
        }
        Ok(())
    }
}

/// Exponent samples at the quadrature nodes of every dyadic cell up to a level.
#[derive(Debug)]
struct CellRule {
    nodes: usize,
    /// per level: `2^j * nodes` values of q at the nodes of each cell
    q_at_nodes: Vec<Vec<f64>>,
    /// Gauss weights on the unit cell
    weights: Vec<f64>,
}

/// Caches per-cell exponent samples so that repeated evaluations on the same
/// spec (Monte Carlo, line searches) only pay for the power functions.
#[derive(Debug, Clone)]
pub struct ModularEvaluator {
    spec: ModularSpec,
    /// s(2^-j m) at the left endpoint of each cell, per level
    smoothness: Arc<Mutex<Vec<Vec<f64>>>>,
    rules: Arc<Mutex<HashMap<(usize, usize), Arc<CellRule>>>>,
}

impl ModularEvaluator {
    pub fn new(spec: ModularSpec) -> Result<Self> {
        spec.validate()?;
        Ok(ModularEvaluator {
            spec,
            smoothness: Arc::new(Mutex::new(Vec::new())),
            rules: Arc::new(Mutex::new(HashMap::new())),
        })
    }

    pub fn spec(&self) -> &ModularSpec {
        &self.spec
    }

    fn smoothness(&self, max_level: usize) -> Vec<Vec<f64>> {
        let mut cache = self.smoothness.lock().expect("smoothness cache");
        while cache.len() <= max_level {
            let j = cache.len();
            let count = 1usize << j;
            cache.push(
                (0..count)
                    .map(|m| self.spec.s.evaluate(m as f64 / count as f64))
                    .collect(),
            );
        }
        cache[..=max_level].to_vec()
    }

    fn rule(&self, max_level: usize, nodes: usize) -> Arc<CellRule> {
        let mut cache = self.rules.lock().expect("rule cache");
        if let Some(rule) = cache.get(&(max_level, nodes)) {
            return rule.clone();
        }
        let gl = GaussLegendre::new(nodes);
        let q_at_nodes = (0..=max_level)
            .map(|j| {
                let count = 1usize << j;
                let width = 1.0 / count as f64;
                let mut out = Vec::with_capacity(count * nodes);
                for m in 0..count {
                    for &x in &gl.nodes {
                        out.push(self.spec.q.evaluate((m as f64 + x) * width));
                    }
                }
                out
            })
            .collect();
        let rule = Arc::new(CellRule {
            nodes,
            q_at_nodes,
            weights: gl.weights,
        });
        cache.insert((max_level, nodes), rule.clone());
        rule
    }

    /// Per-level contributions (level 0 includes both generators) with a fixed
    /// number of nodes per cell. `magnitude` maps a coefficient to the base of
    /// the power, `|lambda|` or its smoothed version.
    fn contributions(
        &self,
        coeffs: &WaveletCoefficients,
        nodes: usize,
        magnitude: &(dyn Fn(f64) -> f64 + Sync),
    ) -> Vec<f64> {
        let max_level = coeffs.max_level();
        let s = self.smoothness(max_level);
        if self.spec.q.is_constant() {
            let q = self.spec.q.lower_bound();
            return (0..=max_level)
                .map(|j| {
                    let width = (-(j as f64)).exp2();
                    let terms: Vec<f64> = level_values(coeffs, j)
                        .iter()
                        .zip(&s[j])
                        .flat_map(|(vals, &sm)| {
                            vals.iter().map(move |&v| {
                                let a = magnitude(v);
                                if a == 0.0 {
                                    0.0
                                } else {
                                    width * (LN_2 * j as f64 * q * sm + q * a.ln()).exp()
                                }
                            })
                        })
                        .collect();
                    pairwise_sum(&terms)
                })
                .collect();
        }
        let rule = self.rule(max_level, nodes);
        (0..=max_level)
            .into_par_iter()
            .map(|j| {
                let width = (-(j as f64)).exp2();
                let qj = &rule.q_at_nodes[j];
                let terms: Vec<f64> = level_values(coeffs, j)
                    .iter()
                    .zip(&s[j])
                    .enumerate()
                    .map(|(m, (vals, &sm))| {
                        let mut cell = 0.0;
                        for &v in vals {
                            let a = magnitude(v);
                            if a == 0.0 {
                                continue;
                            }
                            let ln_a = a.ln();
                            for (i, w) in rule.weights.iter().enumerate() {
                                let q = qj[m * rule.nodes + i];
                                cell += w * (q * (LN_2 * j as f64 * sm + ln_a)).exp();
                            }
                        }
                        cell * width
                    })
                    .collect();
                pairwise_sum(&terms)
            })
            .collect()
    }

    fn adaptive(
        &self,
        coeffs: &WaveletCoefficients,
        magnitude: &(dyn Fn(f64) -> f64 + Sync),
    ) -> (Vec<f64>, usize) {
        let mut nodes = self.spec.quadrature_nodes_per_cell;
        let mut levels = self.contributions(coeffs, nodes, magnitude);
        if self.spec.q.is_constant() {
            return (levels, nodes);
        }
        let mut total = pairwise_sum(&levels);
        while nodes < MAX_NODES_PER_CELL {
            let finer = self.contributions(coeffs, 2 * nodes, magnitude);
            let finer_total = pairwise_sum(&finer);
            nodes *= 2;
            let change = (finer_total - total).abs();
            levels = finer;
            total = finer_total;
            if change < self.spec.target_tolerance * total.abs().max(1.0) {
                break;
            }
        }
        (levels, nodes)
    }

    /// Modular value; coefficients must be in the `lambda` convention.
    pub fn value(&self, coeffs: &WaveletCoefficients) -> Result<f64> {
        Ok(pairwise_sum(&self.level_contributions(coeffs)?))
    }

    /// Per-level contributions, summing to [`Self::value`].
    pub fn level_contributions(&self, coeffs: &WaveletCoefficients) -> Result<Vec<f64>> {
        coeffs.require(Convention::Lambda)?;
        Ok(self.adaptive(coeffs, &|v: f64| v.abs()).0)
    }

    /// Node count per cell at which the modular of `coeffs` has converged.
    pub fn converged_nodes(&self, coeffs: &WaveletCoefficients) -> Result<usize> {
        coeffs.require(Convention::Lambda)?;
        Ok(self.adaptive(coeffs, &|v: f64| v.abs()).1)
    }

    /// Modular with `|lambda|` replaced by `sqrt(lambda^2 + eps^2)`, with its
    /// gradient, both from the same fixed rule of `nodes` per cell.
    pub fn smoothed_value_and_gradient(
        &self,
        coeffs: &WaveletCoefficients,
        eps: f64,
        nodes: usize,
    ) -> Result<(f64, WaveletCoefficients)> {
        let (value, grad, _) = self.smoothed_parts(coeffs, eps, nodes, false)?;
        Ok((value, grad))
    }

    /// Diagonal of the Hessian of the smoothed modular.
    pub fn smoothed_curvature(&self, coeffs: &WaveletCoefficients, eps: f64, nodes: usize) -> Result<WaveletCoefficients> {
        let (_, _, curv) = self.smoothed_parts(coeffs, eps, nodes, true)?;
        Ok(curv)
    }

    fn smoothed_parts(
        &self,
        coeffs: &WaveletCoefficients,
        eps: f64,
        nodes: usize,
        with_curvature: bool,
    ) -> Result<(f64, WaveletCoefficients, WaveletCoefficients)> {
        coeffs.require(Convention::Lambda)?;
        let max_level = coeffs.max_level();
        let s = self.smoothness(max_level);
        let rule = self.rule(max_level, nodes);
        let constant_q = self.spec.q.is_constant().then(|| self.spec.q.lower_bound());
        let mut grad = WaveletCoefficients::zeros(max_level, Convention::Lambda);
        let mut curv = WaveletCoefficients::zeros(max_level, Convention::Lambda);
        let mut level_totals = Vec::with_capacity(max_level + 1);
        for j in 0..=max_level {
            let width = (-(j as f64)).exp2();
            let count = 1usize << j;
            let mut terms = Vec::with_capacity(count + 1);
            let mut grads = vec![0.0; count];
            let mut curvs = vec![0.0; count];
            let (mut grad_f, mut curv_f) = (0.0, 0.0);
            for m in 0..count {
                let sm = s[j][m];
                let cell_value = |v: f64| -> (f64, f64, f64) {
                    let r2 = v * v + eps * eps;
                    let ln_r = 0.5 * r2.ln();
                    let mut val = 0.0;
                    let mut der = 0.0;
                    let mut second = 0.0;
                    let mut accumulate = |q: f64, w: f64| {
                        // 2^{j q s} r^q, d/dv = q v r^{q-2} 2^{j q s},
                        // d2/dv2 = q r^{q-4} ((q-1) v^2 + eps^2) 2^{j q s}
                        let e = (q * (LN_2 * j as f64 * sm + ln_r)).exp();
                        val += w * e;
                        der += w * q * v / r2 * e;
                        if with_curvature {
                            second += w * q * ((q - 1.0) * v * v + eps * eps) / (r2 * r2) * e;
                        }
                    };
                    match constant_q {
                        Some(q) => accumulate(q, 1.0),
                        None => {
                            for (i, &w) in rule.weights.iter().enumerate() {
                                accumulate(rule.q_at_nodes[j][m * rule.nodes + i], w);
                            }
                        }
                    }
                    (val * width, der * width, second * width)
                };
                let (v, d, c) = cell_value(coeffs.level(j)[m]);
                terms.push(v);
                grads[m] = d;
                curvs[m] = c;
                if j == 0 {
                    let (v, d, c) = cell_value(coeffs.scaling());
                    terms.push(v);
                    grad_f = d;
                    curv_f = c;
                }
            }
            level_totals.push(pairwise_sum(&terms));
            grad.level_mut(j).copy_from_slice(&grads);
            curv.level_mut(j).copy_from_slice(&curvs);
            if j == 0 {
                grad.set_scaling(grad_f);
                curv.set_scaling(curv_f);
            }
        }
        Ok((pairwise_sum(&level_totals), grad, curv))
    }

    /// `inf { t > 0 : rho(u / t) <= 1 }` by geometric bracketing and bisection.
    pub fn luxemburg_norm(&self, coeffs: &WaveletCoefficients) -> Result<f64> {
        let rho = self.value(coeffs)?;
        if rho == 0.0 {
            return Ok(0.0);
        }
        let at = |t: f64| -> Result<f64> { self.value(&coeffs.map(|v| v / t)) };
        let guess = rho.powf(1.0 / self.spec.q.lower_bound());
        let (mut lo, mut hi) = (guess, guess);
        // rho(u/t) is nonincreasing in t
        while at(hi)? > 1.0 {
            hi *= 4.0;
        }
        while at(lo)? <= 1.0 {
            lo /= 4.0;
        }
        while (hi - lo) > 1e-12 * hi {
            let mid = 0.5 * (lo + hi);
            if at(mid)? <= 1.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }
}

fn level_values(coeffs: &WaveletCoefficients, j: usize) -> Vec<Vec<f64>> {
    let level = coeffs.level(j);
    if j == 0 {
        vec![vec![coeffs.scaling(), level[0]]]
    } else {
        level.iter().map(|&v| vec![v]).collect()
    }
}

pub fn modular_value(coeffs: &WaveletCoefficients, spec: &ModularSpec) -> Result<f64> {
    ModularEvaluator::new(spec.clone())?.value(coeffs)
}

pub fn luxemburg_norm(coeffs: &WaveletCoefficients, spec: &ModularSpec) -> Result<f64> {
    ModularEvaluator::new(spec.clone())?.luxemburg_norm(coeffs)
}

/// Monte Carlo mean and standard error of the modular over independent draws
/// produced by `sampler(i)`, `i = 0..sample_count`. Draws must be in the
/// `lambda` convention.
pub fn expectation_modular_estimate<F>(
    sampler: F,
    spec: &ModularSpec,
    sample_count: usize,
) -> Result<(f64, f64)>
where
    F: Fn(usize) -> Result<WaveletCoefficients> + Sync,
{
    if sample_count < 2 {
        return invalid("expectation estimate needs at least two samples");
    }
    let eval = ModularEvaluator::new(spec.clone())?;
    let values = (0..sample_count)
        .into_par_iter()
        .map(|i| eval.value(&sampler(i)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_stderr(&values))
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn coeffs(v: Vec<f64>) -> WaveletCoefficients {
        WaveletCoefficients::from_flat(Convention::Lambda, &v).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn convex_on_random_pairs(
            u in proptest::collection::vec(-2.0f64..2.0, 16),
            v in proptest::collection::vec(-2.0f64..2.0, 16),
            theta in 0.0f64..1.0,
        ) {
            let sp = ModularSpec::new(ExponentField::cosine(0.7, 0.2), ExponentField::cosine(1.5, 0.5)).unwrap();
            let eval = ModularEvaluator::new(sp).unwrap();
            let mix: Vec<f64> = u.iter().zip(&v).map(|(a, b)| theta * a + (1.0 - theta) * b).collect();
            let lhs = eval.value(&coeffs(mix)).unwrap();
            let rhs = theta * eval.value(&coeffs(u)).unwrap() + (1.0 - theta) * eval.value(&coeffs(v)).unwrap();
            prop_assert!(lhs <= rhs + 1e-10 * rhs.max(1.0));
        }

        #[test]
        fn nondecreasing_along_rays(u in proptest::collection::vec(-1.0f64..1.0, 8)) {
            let sp = ModularSpec::new(ExponentField::constant(1.0), ExponentField::cosine(1.5, 0.4)).unwrap();
            let eval = ModularEvaluator::new(sp).unwrap();
            let c = coeffs(u);
            let mut last = 0.0;
            for k in -6..6 {
                let lam = 2f64.powi(k);
                let v = eval.value(&c.map(|x| lam * x)).unwrap();
                prop_assert!(v >= last);
                last = v;
            }
        }

        #[test]
        fn zero_only_at_origin(u in proptest::collection::vec(-1.0f64..1.0, 8)) {
            let sp = ModularSpec::new(ExponentField::constant(1.0), ExponentField::constant(1.5)).unwrap();
            let c = coeffs(u.clone());
            let v = modular_value(&c, &sp).unwrap();
            prop_assert_eq!(v == 0.0, u.iter().all(|&x| x == 0.0));
        }
    }
}
