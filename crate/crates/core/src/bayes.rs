//! Posterior potential, normalization, Hellinger distances, truncation
//! studies and a random-walk Metropolis sampler over the raw prior draws.

use std::io::Write;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::forward::{ForwardModel, ObservationMap, ObservationSetup};
use crate::modular::ModularEvaluator;
use crate::prior::{PriorSample, PriorSampler, PriorSpec};
use crate::quadrature::{mean_stderr, pairwise_sum};
use crate::rng;
use crate::wavelet::{BasisTable, Convention, WaveletCoefficients};

/// Prior, forward model, observation setup and data.
#[derive(Clone, Debug)]
pub struct PosteriorHandle {
    sampler: Arc<PriorSampler>,
    model: ForwardModel,
    setup: ObservationSetup,
    data: Vec<f64>,
    map: Arc<ObservationMap>,
    data_energy: f64,
}

impl PosteriorHandle {
    pub fn new(prior: PriorSpec, model: ForwardModel, setup: ObservationSetup, data: Vec<f64>) -> Result<Self> {
        let sampler = Arc::new(PriorSampler::new(prior)?);
        let spec = sampler.spec();
        let map = Arc::new(ObservationMap::new(&model, &setup, &spec.family, spec.truncation));
        Self::assemble(sampler, model, setup, map, data)
    }

    fn assemble(
        sampler: Arc<PriorSampler>,
        model: ForwardModel,
        setup: ObservationSetup,
        map: Arc<ObservationMap>,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != setup.len() {
            return invalid(format!(
                "data has {} entries but the setup has {} points",
                data.len(),
                setup.len()
            ));
        }
        let whitened_data = setup.whiten(&data);
        let data_energy = 0.5 * whitened_data.iter().map(|v| v * v).sum::<f64>();
        Ok(PosteriorHandle {
            sampler,
            model,
            setup,
            data,
            map,
            data_energy,
        })
    }

    /// Same prior, model and setup with new data; the observation map is shared.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::assemble(
            self.sampler.clone(),
            self.model.clone(),
            self.setup.clone(),
            self.map.clone(),
            data,
        )
    }

    pub fn prior(&self) -> &PriorSpec {
        self.sampler.spec()
    }

    pub fn sampler(&self) -> &PriorSampler {
        &self.sampler
    }

    pub fn model(&self) -> &ForwardModel {
        &self.model
    }

    pub fn setup(&self) -> &ObservationSetup {
        &self.setup
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn observation_map(&self) -> &ObservationMap {
        &self.map
    }

    /// `1/2 |Gamma^{-1/2} y|^2`.
    pub fn data_energy(&self) -> f64 {
        self.data_energy
    }

    /// `l(G(u))`.
    pub fn predict(&self, coeffs: &WaveletCoefficients) -> Result<Vec<f64>> {
        self.map.apply(coeffs)
    }

    /// `Phi` from a predicted observation vector.
    pub fn potential_from_prediction(&self, prediction: &[f64]) -> f64 {
        let residual: Vec<f64> = self.data.iter().zip(prediction).map(|(y, p)| y - p).collect();
        let w = self.setup.whiten(&residual);
        0.5 * w.iter().map(|v| v * v).sum::<f64>() - self.data_energy
    }

    /// `Phi(u; y) = 1/2 |Gamma^{-1/2}(y - l(G(u)))|^2 - 1/2 |Gamma^{-1/2} y|^2`.
    pub fn potential(&self, coeffs: &WaveletCoefficients) -> Result<f64> {
        Ok(self.potential_from_prediction(&self.predict(coeffs)?))
    }

    /// `Phi` of the input truncated to levels `<= level` before propagation.
    pub fn truncated_potential(&self, coeffs: &WaveletCoefficients, level: usize) -> Result<f64> {
        self.potential(&coeffs.zero_above(level))
    }

    pub fn unnormalized_density(&self, coeffs: &WaveletCoefficients) -> Result<f64> {
        Ok((-self.potential(coeffs)?).exp())
    }

    /// `d Phi / d u` for `u`-convention flat coefficients.
    pub fn potential_gradient_flat(&self, u: &[f64]) -> Vec<f64> {
        let a = self.map.matrix();
        let pred = self.map.apply_flat(u);
        let residual: Vec<f64> = self.data.iter().zip(&pred).map(|(y, p)| y - p).collect();
        // -A^T Gamma^{-1} r
        let w = self.setup.whiten(&residual);
        let l = self.setup.cholesky_factor();
        let wv = nalgebra::DVector::from_column_slice(&w);
        let g = l.transpose().solve_upper_triangular(&wv).expect("Cholesky factor is nonsingular");
        (0..u.len())
            .map(|d| -(0..a.nrows()).map(|i| a[(i, d)] * g[i]).sum::<f64>())
            .collect()
    }

    /// `Phi` of the prior draws `0..count` (common random numbers).
    pub fn prior_potentials(&self, count: usize) -> Result<Vec<f64>> {
        (0..count as u64)
            .into_par_iter()
            .map(|i| self.potential(&self.sampler.sample(i)?.coeffs))
            .collect()
    }

    /// Construction-time diagnostics that do not invalidate the handle.
    pub fn warnings(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        let gate = delta_gate(self.prior())?;
        if self.prior().delta <= gate.delta_star {
            out.push(format!(
                "delta = {} does not exceed the estimated threshold {:.4} (embedding constant >= {:.4})",
                self.prior().delta,
                gate.delta_star,
                gate.embedding_lower_bound
            ));
        }
        Ok(out)
    }
}

/// Threshold on `delta` from the embedding of the prior space in `C(T)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeltaGate {
    /// grid-based lower bound on the embedding constant `c_e`
    pub embedding_lower_bound: f64,
    /// `2 max(c_e^{q^-}, c_e^{q^+}) (alpha_1 + 2 alpha_2)` with `alpha_1 = 0`, `alpha_2 = 1`
    pub delta_star: f64,
}

/// `c_e >= ||Psi||_inf / ||Psi||` over single basis functions up to level 4.
pub fn delta_gate(prior: &PriorSpec) -> Result<DeltaGate> {
    let table = BasisTable::new(&prior.family)?;
    let eval = ModularEvaluator::new(prior.modular_spec()?)?;
    let top = prior.truncation.min(4);
    let mut best: f64 = 0.0;
    for idx in WaveletCoefficients::indices(top) {
        let mut c = WaveletCoefficients::zeros(top, Convention::U);
        c.set(idx, 1.0);
        let norm = eval.luxemburg_norm(&c.to_convention(Convention::Lambda))?;
        let sup = table.sup_norm(idx, 12);
        best = best.max(sup / norm);
    }
    let (qm, qp) = (prior.q.lower_bound(), prior.q.upper_bound());
    Ok(DeltaGate {
        embedding_lower_bound: best,
        delta_star: 2.0 * best.powf(qm).max(best.powf(qp)) * 2.0,
    })
}

// ---------------------------------------------------------------------------
// Assumption audit

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionAudit {
    pub trials: usize,
    pub radius: f64,
    /// trials with `Phi(u; y) < -1/2 |Gamma^{-1/2} y|^2`
    pub lower_bound_violations: usize,
    /// largest observed `Phi` (the `K(r)` estimate)
    pub upper_bound: f64,
    /// largest observed `|Phi(u1) - Phi(u2)| / ||u1 - u2||`
    pub lipschitz_u: f64,
    /// largest observed `|Phi(u; y1) - Phi(u; y2)| / |y1 - y2|`
    pub lipschitz_y: f64,
}

/// Random `u` in the Luxemburg ball of radius `r` (direction from a prior
/// draw) and random `y` in the Euclidean ball of radius `r`.
pub fn audit_assumption1(handle: &PosteriorHandle, radius: f64, trials: usize, seed: u64) -> Result<AssumptionAudit> {
    if trials == 0 {
        return invalid("audit needs at least one trial");
    }
    if !(radius >= 0.0) {
        return invalid("audit radius must be nonnegative");
    }
    let eval = ModularEvaluator::new(handle.prior().modular_spec()?)?;
    let k = handle.setup().len();
    let draw_u = |rng: &mut rand_chacha::ChaCha8Rng, draw: u64| -> Result<(WaveletCoefficients, f64)> {
        let dir = handle.sampler().sample(draw)?.lambda();
        let norm = eval.luxemburg_norm(&dir)?;
        let target = radius * rng.random::<f64>();
        if norm == 0.0 || target == 0.0 {
            return Ok((WaveletCoefficients::zeros(dir.max_level(), Convention::Lambda), 0.0));
        }
        Ok((dir.map(|v| v * target / norm), target))
    };
    let draw_y = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        let g: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
        let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let target = radius * rng.random::<f64>();
        g.iter().map(|v| if n > 0.0 { v * target / n } else { 0.0 }).collect()
    };
    let results = (0..trials as u64)
        .into_par_iter()
        .map(|t| -> Result<(bool, f64, f64, f64)> {
            let mut rng = rng::stream(seed, "audit", &[t]);
            let (u1, _) = draw_u(&mut rng, 2 * t)?;
            let (u2, _) = draw_u(&mut rng, 2 * t + 1)?;
            let y1 = draw_y(&mut rng);
            let y2 = draw_y(&mut rng);
            let h1 = handle.with_data(y1.clone())?;
            let h2 = handle.with_data(y2.clone())?;
            let p11 = h1.potential(&u1)?;
            let p12 = h1.potential(&u2)?;
            let p21 = h2.potential(&u1)?;
            let violation = p11 < -h1.data_energy() - 1e-12 * (1.0 + h1.data_energy());
            let du = eval.luxemburg_norm(&diff(&u1, &u2))?;
            let lu = if du > 0.0 { (p11 - p12).abs() / du } else { 0.0 };
            let dy = y1.iter().zip(&y2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let ly = if dy > 0.0 { (p11 - p21).abs() / dy } else { 0.0 };
            Ok((violation, p11.max(p12).max(p21), lu, ly))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AssumptionAudit {
        trials,
        radius,
        lower_bound_violations: results.iter().filter(|r| r.0).count(),
        upper_bound: results.iter().map(|r| r.1).fold(0.0, f64::max),
        lipschitz_u: results.iter().map(|r| r.2).fold(0.0, f64::max),
        lipschitz_y: results.iter().map(|r| r.3).fold(0.0, f64::max),
    })
}

fn diff(a: &WaveletCoefficients, b: &WaveletCoefficients) -> WaveletCoefficients {
    let fa = a.to_flat();
    let fb = b.to_convention(a.convention()).to_flat();
    let d: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| x - y).collect();
    WaveletCoefficients::from_flat(a.convention(), &d).expect("same shape")
}

// ---------------------------------------------------------------------------
// Normalization and Hellinger distance

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ZEstimate {
    pub z: f64,
    pub stderr: f64,
    pub log_z: f64,
    /// importance effective sample size of the prior draws
    pub ess: f64,
}

/// Prior Monte Carlo estimate of `Z(y) = E exp(-Phi(u; y))` over draws `0..count`.
pub fn estimate_z(handle: &PosteriorHandle, sample_count: usize) -> Result<ZEstimate> {
    if sample_count < 100 {
        return invalid("Z estimate needs at least 100 samples");
    }
    Ok(z_from_potentials(&handle.prior_potentials(sample_count)?))
}

pub fn z_from_potentials(phi: &[f64]) -> ZEstimate {
    let shift = phi.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = phi.iter().map(|p| (shift - p).exp()).collect();
    let (m, se) = mean_stderr(&w);
    let scale = (-shift).exp();
    let sq: Vec<f64> = w.iter().map(|v| v * v).collect();
    let ess = pairwise_sum(&w).powi(2) / pairwise_sum(&sq);
    ZEstimate {
        z: m * scale,
        stderr: se * scale,
        log_z: m.ln() - shift,
        ess,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HellingerEstimate {
    pub distance: f64,
    pub stderr: f64,
    /// smaller Kish effective size of the two weight sets
    pub ess: f64,
}

/// Hellinger distance between two posteriors with the same prior from
/// potentials evaluated on the same prior draws.
pub fn hellinger_from_potentials(phi_a: &[f64], phi_b: &[f64]) -> Result<HellingerEstimate> {
    let n = phi_a.len();
    if n != phi_b.len() || n < 2 {
        return invalid("Hellinger estimate needs two equally long potential lists");
    }
    let ca = phi_a.iter().copied().fold(f64::INFINITY, f64::min);
    let cb = phi_b.iter().copied().fold(f64::INFINITY, f64::min);
    let a: Vec<f64> = phi_a.iter().map(|p| (ca - p).exp()).collect();
    let b: Vec<f64> = phi_b.iter().map(|p| (cb - p).exp()).collect();
    let c: Vec<f64> = phi_a
        .iter()
        .zip(phi_b)
        .map(|(pa, pb)| (0.5 * (ca - pa) + 0.5 * (cb - pb)).exp())
        .collect();
    let (ma, mb, mc) = (
        pairwise_sum(&a) / n as f64,
        pairwise_sum(&b) / n as f64,
        pairwise_sum(&c) / n as f64,
    );
    // affinity R = mean(c) / sqrt(mean(a) mean(b)); logs make identical inputs cancel exactly
    let r = (mc.ln() - 0.5 * ma.ln() - 0.5 * mb.ln()).exp();
    let d2 = (1.0 - r).clamp(0.0, 1.0);
    // delta method on (c, a, b)
    let infl: Vec<f64> = (0..n)
        .map(|i| (c[i] - mc) / (ma * mb).sqrt() - 0.5 * r * (a[i] - ma) / ma - 0.5 * r * (b[i] - mb) / mb)
        .collect();
    let (_, se_r) = mean_stderr(&infl);
    let distance = d2.sqrt();
    let stderr = if distance > 0.0 {
        (se_r / (2.0 * distance)).min(se_r.sqrt())
    } else {
        se_r.sqrt()
    };
    let kish = |w: &[f64]| {
        let s = pairwise_sum(w);
        s * s / w.iter().map(|x| x * x).sum::<f64>()
    };
    Ok(HellingerEstimate {
        distance,
        stderr,
        ess: kish(&a).min(kish(&b)),
    })
}

/// Hellinger distance between two posteriors using prior draws `0..count`.
pub fn hellinger(a: &PosteriorHandle, b: &PosteriorHandle, sample_count: usize) -> Result<HellingerEstimate> {
    if a.prior() != b.prior() {
        return invalid("Hellinger distance needs both posteriors to share the prior");
    }
    let pairs = (0..sample_count as u64)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64)> {
            let u = a.sampler().sample(i)?.coeffs;
            Ok((a.potential(&u)?, b.potential(&u)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let (pa, pb): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    hellinger_from_potentials(&pa, &pb)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TruncationRow {
    #[serde(rename = "N")]
    pub level: usize,
    pub hellinger: f64,
    pub stderr: f64,
    pub ess: f64,
}

/// Distances between the full posterior and those with the input truncated
/// to levels `<= N`, on common prior draws.
pub fn truncation_study(handle: &PosteriorHandle, levels: &[usize], sample_count: usize) -> Result<Vec<TruncationRow>> {
    let j = handle.prior().truncation;
    if let Some(&n) = levels.iter().find(|&&n| n > j) {
        return invalid(format!("truncation level {n} exceeds the prior truncation {j}"));
    }
    let rows = (0..sample_count as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let u = handle.sampler().sample(i)?.coeffs;
            let mut out = vec![handle.potential(&u)?];
            for &n in levels {
                out.push(handle.truncated_potential(&u, n)?);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let full: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    levels
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            let trunc: Vec<f64> = rows.iter().map(|r| r[c + 1]).collect();
            let h = hellinger_from_potentials(&full, &trunc)?;
            Ok(TruncationRow {
                level: n,
                hellinger: h.distance,
                stderr: h.stderr,
                ess: h.ess,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// MCMC

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct ChainConfig {
    pub steps: usize,
    pub burn_in: usize,
    pub proposal_scale: f64,
    pub seed: u64,
    #[serde(default)]
    pub adapt: bool,
    /// keep every `thin`-th post-burn-in state
    #[serde(default = "one")]
    pub thin: usize,
}

fn one() -> usize {
    1
}

impl ChainConfig {
    pub fn new(steps: usize, burn_in: usize, proposal_scale: f64, seed: u64) -> Result<Self> {
        let c = ChainConfig {
            steps,
            burn_in,
            proposal_scale,
            seed,
            adapt: false,
            thin: 1,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.steps {
            return invalid("burn_in must be smaller than steps");
        }
        if !(self.proposal_scale > 0.0) {
            return invalid("proposal_scale must be positive");
        }
        if self.thin == 0 {
            return invalid("thin must be at least 1");
        }
        Ok(())
    }
}

/// Recorded post-burn-in states of a chain over the raw draws `xi`.
#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    /// flat `xi` states
    pub states: Vec<Vec<f64>>,
    /// `Phi` per recorded state
    pub potentials: Vec<f64>,
    /// acceptance flag of the step producing each recorded state
    pub accepted: Vec<bool>,
    /// post-burn-in acceptance rate
    pub acceptance_rate: f64,
    /// proposal scale after adaptation
    pub final_scale: f64,
    pub burn_in: usize,
    pub thin: usize,
}

impl Chain {
    pub fn samples(&self, handle: &PosteriorHandle) -> Result<Vec<PriorSample>> {
        self.states
            .iter()
            .map(|x| Ok(handle.sampler().assemble(WaveletCoefficients::from_flat(Convention::U, x)?)))
            .collect()
    }

    /// CSV with columns `step,phi,accepted,xi_0..xi_{c-1}` for the first `c` coordinates.
    pub fn write_csv<W: Write>(&self, mut out: W, coordinates: usize) -> Result<()> {
        let c = coordinates.min(self.states.first().map_or(0, |s| s.len()));
        write!(out, "step,phi,accepted")?;
        for i in 0..c {
            write!(out, ",xi_{i}")?;
        }
        writeln!(out)?;
        for (r, state) in self.states.iter().enumerate() {
            write!(
                out,
                "{},{:e},{}",
                self.burn_in + (r + 1) * self.thin,
                self.potentials[r],
                self.accepted[r] as u8
            )?;
            for v in &state[..c] {
                write!(out, ",{v:e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Random-walk Metropolis on the raw draws `xi`, targeting
/// `exp(-Phi(u(xi); y)) prod exp(-phi(xi_i)/2)`. Each step perturbs a random
/// block of `ceil(sqrt(D))` coordinates. With `adapt`, the scale moves toward
/// 25% acceptance during burn-in only. The chain starts at prior draw 0.
pub fn run_mcmc(handle: &PosteriorHandle, config: &ChainConfig) -> Result<Chain> {
    config.validate()?;
    let sampler = handle.sampler();
    let law = sampler.law();
    let gammas = sampler.gammas().to_flat();
    let a = handle.observation_map().matrix();
    let dim = gammas.len();
    let block = (dim as f64).sqrt().ceil() as usize;
    let mut rng = rng::stream(config.seed, "mcmc", &[]);

    let mut xi = sampler.sample(0)?.xi.to_flat();
    let u_of = |x: &[f64]| -> Vec<f64> { x.iter().zip(&gammas).map(|(a, g)| a * g).collect() };
    let mut pred = handle.observation_map().apply_flat(&u_of(&xi));
    let mut phi = handle.potential_from_prediction(&pred);
    let mut prior_terms: Vec<f64> = xi.iter().map(|&x| law.potential(x)).collect();

    let mut scale = config.proposal_scale;
    let mut window_accepts = 0usize;
    let mut accepts_after = 0usize;
    let kept = (config.steps - config.burn_in) / config.thin;
    let mut chain = Chain {
        states: Vec::with_capacity(kept),
        potentials: Vec::with_capacity(kept),
        accepted: Vec::with_capacity(kept),
        acceptance_rate: 0.0,
        final_scale: scale,
        burn_in: config.burn_in,
        thin: config.thin,
    };
    let mut proposal_pred = vec![0.0; pred.len()];
    let mut moves: Vec<(usize, f64, f64)> = Vec::with_capacity(block);
    for step in 1..=config.steps {
        moves.clear();
        proposal_pred.copy_from_slice(&pred);
        let mut log_ratio = 0.0;
        for d in index::sample(&mut rng, dim, block) {
            let z: f64 = StandardNormal.sample(&mut rng);
            let new = xi[d] + scale * z;
            let new_term = law.potential(new);
            log_ratio -= 0.5 * (new_term - prior_terms[d]);
            let du = (new - xi[d]) * gammas[d];
            for (i, p) in proposal_pred.iter_mut().enumerate() {
                *p += a[(i, d)] * du;
            }
            moves.push((d, new, new_term));
        }
        let new_phi = handle.potential_from_prediction(&proposal_pred);
        log_ratio -= new_phi - phi;
        let accept = log_ratio >= 0.0 || rng.random::<f64>() < log_ratio.exp();
        if accept {
            for &(d, v, t) in &moves {
                xi[d] = v;
                prior_terms[d] = t;
            }
            std::mem::swap(&mut pred, &mut proposal_pred);
            phi = new_phi;
        }
        if step <= config.burn_in {
            if config.adapt {
                window_accepts += accept as usize;
                if step % 100 == 0 {
                    let rate = window_accepts as f64 / 100.0;
                    scale *= ((rate - 0.25) * 2.0).exp();
                    window_accepts = 0;
                }
            }
        } else {
            accepts_after += accept as usize;
            if (step - config.burn_in) % config.thin == 0 {
                chain.states.push(xi.clone());
                chain.potentials.push(phi);
                chain.accepted.push(accept);
            }
        }
        if step % 4096 == 0 {
            // refresh against accumulated rounding
            pred = handle.observation_map().apply_flat(&u_of(&xi));
            phi = handle.potential_from_prediction(&pred);
        }
    }
    chain.acceptance_rate = accepts_after as f64 / (config.steps - config.burn_in) as f64;
    chain.final_scale = scale;
    Ok(chain)
}

/// Runs independent chains with seeds `seed, seed+1, ...` concurrently.
pub fn run_chains(handle: &PosteriorHandle, config: &ChainConfig, count: usize) -> Result<Vec<Chain>> {
    (0..count as u64)
        .into_par_iter()
        .map(|c| {
            run_mcmc(
                handle,
                &ChainConfig {
                    seed: config.seed.wrapping_add(c),
                    ..config.clone()
                },
            )
        })
        .collect()
}

/// Potential-scale-reduction statistic of one coordinate across chains.
pub fn potential_scale_reduction(chains: &[Chain], coordinate: usize) -> Result<f64> {
    if chains.len() < 2 {
        return invalid("R-hat needs at least two chains");
    }
    let n = chains.iter().map(|c| c.states.len()).min().unwrap_or(0);
    if n < 2 {
        return Err(Error::InvalidInput("chains too short for R-hat".into()));
    }
    let stats: Vec<(f64, f64)> = chains
        .iter()
        .map(|c| {
            let v: Vec<f64> = c.states[..n].iter().map(|s| s[coordinate]).collect();
            let (m, se) = mean_stderr(&v);
            (m, se * se * n as f64)
        })
        .collect();
    let m = chains.len() as f64;
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / m;
    let b = n as f64 / (m - 1.0) * stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m;
    let var = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    Ok((var / w).sqrt())
}

/// Writes `(N, hellinger, stderr)` rows as CSV.
pub fn write_truncation_csv<W: Write>(mut out: W, rows: &[TruncationRow]) -> Result<()> {
    writeln!(out, "N,hellinger,stderr,ess")?;
    for r in rows {
        writeln!(out, "{},{:e},{:e},{:e}", r.level, r.hellinger, r.stderr, r.ess)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exponent::ExponentField;

    fn handle(data: Vec<f64>, variance: f64) -> PosteriorHandle {
        let prior = PriorSpec::new(ExponentField::constant(1.5), ExponentField::constant(2.0), 4.0, 3, 5).unwrap();
        let model = ForwardModel::heat(0.01, 32).unwrap();
        let k = data.len();
        let setup = ObservationSetup::isotropic((0..k).map(|i| i as f64 / k as f64).collect(), variance).unwrap();
        PosteriorHandle::new(prior, model, setup, data).unwrap()
    }

    #[test]
    fn potential_examples() {
        let h = handle(vec![0.3, -0.2], 0.5);
        let zero = WaveletCoefficients::zeros(3, Convention::U);
        assert_eq!(h.potential(&zero).unwrap(), 0.0);
        let u = h.sampler().sample(0).unwrap().coeffs;
        let y = h.predict(&u).unwrap();
        let exact = h.with_data(y).unwrap();
        assert!((exact.potential(&u).unwrap() + exact.data_energy()).abs() < 1e-12);
        assert!(h.with_data(vec![1.0]).is_err());
    }

    #[test]
    fn hand_arithmetic() {
        let h = handle(vec![1.0], 1.0);
        assert!((h.potential_from_prediction(&[0.5]) + 0.375).abs() < 1e-15);
    }

    #[test]
    fn whitened_equals_direct() {
        let gamma = nalgebra::DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 0.5]);
        let setup = ObservationSetup::new(vec![0.1, 0.4, 0.7], gamma.clone()).unwrap();
        let prior = PriorSpec::new(ExponentField::constant(1.5), ExponentField::constant(2.0), 4.0, 3, 5).unwrap();
        let y = vec![0.4, -1.0, 0.25];
        let h = PosteriorHandle::new(prior, ForwardModel::heat(0.01, 32).unwrap(), setup, y.clone()).unwrap();
        let inv = gamma.try_inverse().unwrap();
        for draw in 0..5 {
            let u = h.sampler().sample(draw).unwrap().coeffs;
            let p = h.predict(&u).unwrap();
            let r = nalgebra::DVector::from_iterator(3, y.iter().zip(&p).map(|(a, b)| a - b));
            let yv = nalgebra::DVector::from_column_slice(&y);
            let direct = 0.5 * (r.transpose() * &inv * &r)[0] - 0.5 * (yv.transpose() * &inv * &yv)[0];
            assert!((h.potential(&u).unwrap() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_difference() {
        let h = handle(vec![0.3, -0.2, 0.5], 0.1);
        let u = h.sampler().sample(1).unwrap().coeffs.to_flat();
        let g = h.potential_gradient_flat(&u);
        for d in [0, 1, 5, 9] {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[d] += 1e-6;
            dn[d] -= 1e-6;
            let f = |x: &[f64]| h.potential_from_prediction(&h.observation_map().apply_flat(x));
            let fd = (f(&up) - f(&dn)) / 2e-6;
            assert!((fd - g[d]).abs() < 1e-6 * (1.0 + g[d].abs()), "{d}: {fd} vs {}", g[d]);
        }
    }

    #[test]
    fn z_is_positive_and_identity_hellinger_vanishes() {
        let h = handle(vec![0.3, -0.2, 0.5, 0.0], 0.1);
        let z = estimate_z(&h, 200).unwrap();
        assert!(z.z > 0.0 && z.stderr >= 0.0);
        assert!(estimate_z(&h, 50).is_err());
        let d = hellinger(&h, &h, 200).unwrap();
        assert_eq!(d.distance, 0.0);
        let other = h.with_data(vec![0.5, -0.2, 0.5, 0.0]).unwrap();
        let ab = hellinger(&h, &other, 300).unwrap();
        let ba = hellinger(&other, &h, 300).unwrap();
        assert_eq!(ab.distance, ba.distance);
        assert!(ab.distance > 0.0 && ab.distance <= 1.0);
    }

    #[test]
    fn zero_data_and_no_signal_gives_unit_z() {
        let prior = PriorSpec::new(ExponentField::constant(1.5), ExponentField::constant(2.0), 4.0, 2, 5).unwrap();
        let setup = ObservationSetup::isotropic(vec![0.2], 1.0).unwrap();
        // a heat model with huge time annihilates all modes but 0; zero scaling mean keeps Phi tiny
        let h = PosteriorHandle::new(prior, ForwardModel::heat(1.0, 1).unwrap(), setup, vec![0.0]).unwrap();
        let zero = WaveletCoefficients::zeros(2, Convention::U);
        assert_eq!(h.potential(&zero).unwrap(), 0.0);
        let z = z_from_potentials(&vec![0.0; 100]);
        assert_eq!(z.z, 1.0);
    }

    #[test]
    fn truncation_at_full_level_is_zero() {
        let h = handle(vec![0.3, -0.2, 0.5, 0.0], 0.1);
        let rows = truncation_study(&h, &[1, 3], 200).unwrap();
        assert_eq!(rows[1].hellinger, 0.0);
        assert!(rows[0].hellinger >= 0.0);
        assert!(truncation_study(&h, &[4], 200).is_err());
    }

    #[test]
    fn tiny_steps_accept_almost_everything() {
        let h = handle(vec![0.3, -0.2, 0.5, 0.0], 0.1);
        let cfg = ChainConfig::new(2000, 100, 1e-7, 9).unwrap();
        let chain = run_mcmc(&h, &cfg).unwrap();
        assert!(chain.acceptance_rate > 0.99, "{}", chain.acceptance_rate);
        assert_eq!(chain.states.len(), 1900);
        assert_eq!(run_mcmc(&h, &cfg).unwrap(), chain);
        assert!(ChainConfig::new(10, 10, 1.0, 0).is_err());
    }

    #[test]
    fn audit_zero_radius() {
        let h = handle(vec![0.0, 0.0], 0.1);
        let a = audit_assumption1(&h, 0.0, 100, 3).unwrap();
        assert_eq!(a.lower_bound_violations, 0);
        assert_eq!((a.upper_bound, a.lipschitz_u, a.lipschitz_y), (0.0, 0.0, 0.0));
    }

    #[test]
    fn delta_gate_is_positive() {
        let prior = PriorSpec::new(ExponentField::constant(1.5), ExponentField::constant(2.0), 4.0, 3, 5).unwrap();
        let gate = delta_gate(&prior).unwrap();
        assert!(gate.embedding_lower_bound > 0.0 && gate.delta_star > 0.0);
    }
}
