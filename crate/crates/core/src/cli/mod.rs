//! Experiment runner behind the `varbesov` binary.

pub mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::bayes::{hellinger, potential_scale_reduction, run_chains, truncation_study, write_truncation_csv, ChainConfig};
use crate::error::{Error, Result};
use crate::exponent::{gap_condition, HoelderBudget};
use crate::forward::{observe, propagate, Spectrum};
use crate::io;
use crate::map::{solve_map, verify_minimizing_sequence, MapProblem};
use crate::modular::ModularEvaluator;
use crate::prior::{empirical_hoelder_exponent, hoelder_condition, kolmogorov_sums, prior_modulars, PriorSampler};
use crate::quadrature::mean_stderr;
use crate::rng;
use crate::wavelet::{Convention, SpectralBasis};
use config::{Diagnostic, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "varbesov", version, about = "Variable-index Besov priors and Bayesian backward diffusion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration (JSON with comments)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the config)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Root seed (overrides the config)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Only check the configuration
    #[arg(long, global = true)]
    pub validate_only: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Draw prior samples with modular diagnostics
    SamplePrior,
    /// Exponential-moment table across truncation levels
    FerniqueTest,
    /// Hölder predicates and empirical exponents of prior draws
    HoelderTest,
    /// Propagate the ground truth and observe it
    Forward,
    /// Simulate observations from the ground truth
    SimulateData,
    /// Solve the MAP problem
    Map,
    /// Run Metropolis chains
    Mcmc,
    /// Hellinger distances between posteriors with perturbed data
    Hellinger,
    /// Hellinger distances to truncated posteriors
    TruncationStudy,
    /// Check the configuration without running anything
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SamplePrior => "sample-prior",
            Command::FerniqueTest => "fernique-test",
            Command::HoelderTest => "hoelder-test",
            Command::Forward => "forward",
            Command::SimulateData => "simulate-data",
            Command::Map => "map",
            Command::Mcmc => "mcmc",
            Command::Hellinger => "hellinger",
            Command::TruncationStudy => "truncation-study",
            Command::Validate => "validate",
        }
    }
}

/// Process exit code for a command line.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

struct Run {
    out: PathBuf,
    artifacts: Vec<String>,
}

impl Run {
    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.out.join(name)
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut f = self.create(name)?;
        serde_json::to_writer_pretty(&mut f, value)?;
        writeln!(f)?;
        Ok(())
    }
}

fn op<T>(name: &str, r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| format!("{name} failed: {e}"))
}

pub fn run(cli: &Cli) -> std::result::Result<i32, String> {
    let path = cli.config.as_ref().ok_or("--config PATH is required")?;
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut config = config::parse(&text).map_err(|d| format!("{}: {d}", path.display()))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let report = config::validate(&config, &text);
    for w in &report.warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    if cli.command == Command::Validate {
        println!("{}", serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?);
        return Ok(if report.violations.is_empty() { 0 } else { 1 });
    }
    if !report.violations.is_empty() {
        let lines: Vec<String> = report.violations.iter().map(Diagnostic::to_string).collect();
        return Err(format!("invalid configuration {}:\n  {}", path.display(), lines.join("\n  ")));
    }
    if cli.validate_only {
        return Ok(0);
    }
    if let Some(n) = cli.threads {
        // fails only if a pool already exists, which keeps the existing one
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out = cli
        .out
        .clone()
        .or_else(|| config.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out).map_err(|e| format!("cannot create {}: {e}", out.display()))?;
    let mut run = Run {
        out,
        artifacts: Vec::new(),
    };
    let name = cli.command.name();
    let result = match cli.command {
        Command::SamplePrior => sample_prior(&config, &mut run),
        Command::FerniqueTest => fernique_test(&config, &mut run),
        Command::HoelderTest => hoelder_test(&config, &mut run),
        Command::Forward => forward(&config, &mut run),
        Command::SimulateData => simulate(&config, &mut run),
        Command::Map => map(&config, &mut run),
        Command::Mcmc => mcmc(&config, &mut run),
        Command::Hellinger => hellinger_table(&config, &mut run),
        Command::TruncationStudy => truncation(&config, &mut run),
        Command::Validate => unreachable!(),
    };
    op(name, result)?;
    op("manifest", write_manifest(&config, name, cli.threads, &mut run))?;
    Ok(0)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_manifest(config: &ExperimentConfig, command: &str, threads: Option<usize>, run: &mut Run) -> Result<()> {
    let mut files = Vec::new();
    let mut names = run.artifacts.clone();
    names.sort();
    for name in names {
        let bytes = fs::read(run.out.join(&name))?;
        files.push(json!({"file": name, "bytes": bytes.len(), "sha256": sha256_hex(&bytes)}));
    }
    let manifest = json!({
        "tool": "varbesov",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": command,
        "seed": config.seed,
        "threads": threads,
        "config_hash": config::config_hash(config)?,
        "config": config,
        "artifacts": files,
    });
    let mut f = BufWriter::new(File::create(run.out.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    writeln!(f)?;
    Ok(())
}

fn sample_prior(config: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let task = &config.task.sample_prior;
    let spec = config::build_prior(config)?;
    let sampler = PriorSampler::new(spec.clone())?;
    let eval = ModularEvaluator::new(spec.modular_spec()?)?;
    let spec_hash = config::config_hash(config)?;
    let mut diag = run.create("diagnostics.csv")?;
    writeln!(diag, "draw,modular,luxemburg,max_abs_coefficient")?;
    for draw in 0..task.count {
        let sample = sampler.sample(draw as u64)?;
        let lambda = sample.lambda();
        let rho = eval.value(&lambda)?;
        let norm = eval.luxemburg_norm(&lambda)?;
        let max_abs = sample.coeffs.to_flat().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        writeln!(diag, "{draw},{rho:e},{norm:e},{max_abs:e}")?;
        let stem = format!("sample_{draw:04}");
        match task.format.as_str() {
            "csv" => io::write_csv(run.create(&format!("{stem}.csv"))?, &sample.coeffs, spec.family.order())?,
            "binary" => io::write_binary(&run.path(&format!("{stem}.bin")), &sample.coeffs, spec.family.order())?,
            other => return Err(Error::Config(format!("unknown coefficient format {other:?}"))),
        }
        run.json(
            &format!("{stem}.json"),
            &json!({"spec_hash": spec_hash, "seed": config.seed, "prior_seed": spec.seed, "draw": draw}),
        )?;
        if task.grid > 0 {
            let values = sampler.synthesize(&sample, task.grid)?;
            io::write_grid_csv(run.create(&format!("{stem}_grid.csv"))?, &values)?;
        }
    }
    diag.flush()?;
    Ok(())
}

fn fernique_test(config: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let task = &config.task.fernique;
    let spec = config::build_prior(config)?;
    let alpha = task.alpha.unwrap_or(spec.delta / 4.0);
    let mut out = run.create("fernique.csv")?;
    writeln!(
        out,
        "t_index,gap,level,alpha,exp_moment,exp_stderr,modular_mean,modular_stderr,growth_ratio,diverging"
    )?;
    for (i, t) in task.t.iter().enumerate() {
        let gap = gap_condition(t, &spec.s, &spec.q, 1);
        let mut rows = Vec::new();
        for &level in &task.levels {
            let r = prior_modulars(&spec.with_truncation(level), t, task.samples)?;
            let e: Vec<f64> = r.iter().map(|v| (alpha * v).exp()).collect();
            let (em, es) = mean_stderr(&e);
            let (mm, ms) = mean_stderr(&r);
            rows.push((level, em, es, mm, ms));
        }
        let first = rows.first().map_or(f64::NAN, |r| r.3);
        for &(level, em, es, mm, ms) in &rows {
            let growth = mm / first;
            writeln!(
                out,
                "{i},{gap:e},{level},{alpha:e},{em:e},{es:e},{mm:e},{ms:e},{growth:e},{}",
                (growth >= 2.0) as u8
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

fn hoelder_test(config: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let task = &config.task.hoelder;
    let b = &task.budget;
    let budget = HoelderBudget::new(b.b, b.a, b.alpha, b.theta)?;
    let spec = config::build_prior(config)?;
    let sampler = PriorSampler::new(spec.clone())?;
    let grid = if task.grid == 0 { 8usize << spec.truncation } else { task.grid };
    let condition = hoelder_condition(&spec.s, &spec.q, &budget, 1);
    let sums = kolmogorov_sums(&spec, &budget, spec.truncation)?;
    let threshold = budget.alpha * budget.theta / 2.0 - 0.15;
    let mut out = run.create("hoelder.csv")?;
    writeln!(out, "draw,slope,above_threshold")?;
    let mut passes = 0;
    for draw in 0..task.samples {
        let slope = empirical_hoelder_exponent(&sampler.sample(draw as u64)?, &spec.family, grid)?;
        let ok = slope >= threshold;
        passes += ok as usize;
        writeln!(out, "{draw},{slope:e},{}", ok as u8)?;
    }
    out.flush()?;
    run.json(
        "hoelder.json",
        &json!({
            "condition": condition,
            "threshold": threshold,
            "samples": task.samples,
            "above_threshold": passes,
            "kolmogorov": sums,
        }),
    )
}

fn truth_spectrum(config: &ExperimentConfig) -> Result<(Spectrum, crate::prior::PriorSample)> {
    let model = config::build_model(config)?;
    let truth = config::truth(config)?;
    let family = config::build_prior(config)?.family;
    let basis = SpectralBasis::new(&family, truth.truncation, model.cutoff_modes());
    Ok((
        Spectrum::from_coefficients(&truth.coeffs, &basis, model.cutoff_modes())?,
        truth,
    ))
}

fn forward(config: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let model = config::build_model(config)?;
    let (spectrum, truth) = truth_spectrum(config)?;
    let grid = match config.task.forward.grid {
        0 => 256.max(4usize << truth.truncation),
        g => g,
    };
    let family = config::build_prior(config)?.family;
    let input = crate::wavelet::synthesize(&truth.coeffs, &family, grid)?;
    io::write_grid_csv(run.create("input.csv")?, &input)?;
    let propagated = propagate(&spectrum, &model);
    io::write_grid_csv(run.create("forward.csv")?, &propagated.to_grid(grid)?)?;
    if let Some(obs) = &config.observation {
        let setup: crate::forward::ObservationSetup = obs.clone().try_into()?;
        let values = observe(&propagated, &setup);
        io::write_points_csv(run.create("observations.csv")?, setup.points(), &values)?;
    }
    Ok(())
}

fn simulate(config: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let model = config::build_model(config)?;
    let setup = config::build_setup(config)?;
    let data = config::build_data(config, &model, &setup)?;
    io::write_points_csv(run.create("data.csv")?, setup.points(), &data)?;
    let truth = config::truth(config)?;
    let family = config::build_prior(config)?.family;
    io::write_binary(&run.path("truth.bin"), &truth.coeffs, family.order())
}

fn map(config: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let handle = config::build_handle(config)?;
    let order = handle.prior().family.order();
    let mut settings = config.task.map.settings.clone();
    settings.seed = rng::derive_key(config.seed, "map", &[]);
    let problem = MapProblem::new(handle, settings)?;
    let solution = solve_map(&problem)?;
    let report = verify_minimizing_sequence(&problem, &solution.coeffs, config.task.map.verify_directions)?;
    io::write_binary(&run.path("map_solution.bin"), &solution.coeffs, order)?;
    run.json(
        "map_report.json",
        &json!({
            "I_value": solution.i_value,
            "iterations": solution.iterations,
            "converged": solution.converged,
            "epsilon_schedule": solution.schedule,
            "start_values": solution.start_values,
            "verification": report,
        }),
    )
}

fn mcmc(config: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let task = &config.task.mcmc;
    let handle = config::build_handle(config)?;
    let chain_config = ChainConfig {
        steps: task.steps,
        burn_in: task.burn_in,
        proposal_scale: task.proposal_scale,
        seed: rng::derive_key(config.seed, "mcmc", &[]),
        adapt: task.adapt,
        thin: task.thin,
    };
    let chains = run_chains(&handle, &chain_config, task.chains.max(1))?;
    for (c, chain) in chains.iter().enumerate() {
        chain.write_csv(run.create(&format!("chain_{c}.csv"))?, task.trace_coordinates)?;
    }
    let coords = task.trace_coordinates.min(handle.prior().dimension());
    let rhat: Vec<Option<f64>> = (0..coords)
        .map(|d| potential_scale_reduction(&chains, d).ok())
        .collect();
    let means: Vec<f64> = (0..handle.prior().dimension())
        .map(|d| {
            let all: Vec<f64> = chains.iter().flat_map(|c| c.states.iter().map(move |s| s[d])).collect();
            mean_stderr(&all).0
        })
        .collect();
    let xi = crate::wavelet::WaveletCoefficients::from_flat(Convention::U, &means)?;
    io::write_binary(&run.path("posterior_mean_xi.bin"), &xi, handle.prior().family.order())?;
    run.json(
        "mcmc_summary.json",
        &json!({
            "acceptance_rates": chains.iter().map(|c| c.acceptance_rate).collect::<Vec<_>>(),
            "final_scales": chains.iter().map(|c| c.final_scale).collect::<Vec<_>>(),
            "recorded_states": chains.iter().map(|c| c.states.len()).collect::<Vec<_>>(),
            "rhat": rhat,
        }),
    )
}

fn hellinger_table(config: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let task = &config.task.hellinger;
    let base = config::build_handle(config)?;
    if task.component >= base.data().len() {
        return Err(Error::Config(format!("hellinger component {} out of range", task.component)));
    }
    let mut handles = vec![(0.0, base.clone())];
    for &eps in &task.perturbations {
        let mut y = base.data().to_vec();
        y[task.component] += eps;
        handles.push((eps, base.with_data(y)?));
    }
    let mut out = run.create("hellinger.csv")?;
    writeln!(out, "eps_a,eps_b,hellinger,stderr,ratio,ess")?;
    for i in 0..handles.len() {
        for j in i + 1..handles.len() {
            let d = hellinger(&handles[i].1, &handles[j].1, task.samples)?;
            let gap = (handles[i].0 - handles[j].0).abs();
            writeln!(
                out,
                "{:e},{:e},{:e},{:e},{:e},{:e}",
                handles[i].0,
                handles[j].0,
                d.distance,
                d.stderr,
                d.distance / gap,
                d.ess
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

fn truncation(config: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let task = &config.task.truncation;
    let handle = config::build_handle(config)?;
    let levels: Vec<usize> = if task.levels.is_empty() {
        (0..handle.prior().truncation).collect()
    } else {
        task.levels.clone()
    };
    let rows = truncation_study(&handle, &levels, task.samples)?;
    write_truncation_csv(run.create("truncation.csv")?, &rows)
}

/// Directory entries written by a run, for tests and tooling.
pub fn list_outputs(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect();
    names.sort();
    Ok(names)
}
