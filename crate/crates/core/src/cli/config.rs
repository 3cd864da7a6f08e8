//! Experiment configuration: JSON with `//` and `/* */` comments, one schema
//! shared by all subcommands.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bayes::{delta_gate, PosteriorHandle};
use crate::error::{Error, Result};
use crate::exponent::{gap_condition, ExponentField, HoelderBudget};
use crate::forward::{
    check_beta_gate, simulate_data, ForwardKind, ForwardModel, ForwardParams, ObservationParams, ObservationSetup,
    Spectrum,
};
use crate::map::MapSettings;
use crate::prior::{KappaQuadrature, PriorSample, PriorSampler, PriorSpec};
use crate::rng;
use crate::wavelet::{SpectralBasis, WaveletFamily};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub prior: PriorBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ForwardParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<ObservationParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataBlock>,
    #[serde(default)]
    pub task: TaskBlock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorBlock {
    pub s: ExponentField,
    pub q: ExponentField,
    pub delta: f64,
    pub truncation: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family_order: Option<usize>,
    #[serde(default = "default_kappa_nodes")]
    pub kappa_nodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<ExponentField>,
}

fn default_kappa_nodes() -> usize {
    64
}

/// Observed data: explicit values, or a simulation from a prior draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum DataBlock {
    Values { values: Vec<f64> },
    Simulate { truth_draw: u64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskBlock {
    pub sample_prior: SamplePriorTask,
    pub fernique: FerniqueTask,
    pub hoelder: HoelderTask,
    pub forward: ForwardTask,
    pub map: MapTask,
    pub mcmc: McmcTask,
    pub hellinger: HellingerTask,
    pub truncation: TruncationTask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplePriorTask {
    pub count: usize,
    /// grid size for `x,value` exports, 0 for none
    pub grid: usize,
    /// "binary" or "csv"
    pub format: String,
}

impl Default for SamplePriorTask {
    fn default() -> Self {
        SamplePriorTask {
            count: 10,
            grid: 0,
            format: "binary".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FerniqueTask {
    pub t: Vec<ExponentField>,
    /// defaults to delta / 4
    pub alpha: Option<f64>,
    pub levels: Vec<usize>,
    pub samples: usize,
}

impl Default for FerniqueTask {
    fn default() -> Self {
        FerniqueTask {
            t: vec![ExponentField::constant(0.2)],
            alpha: None,
            levels: vec![8, 10],
            samples: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HoelderTask {
    pub budget: HoelderBudget,
    pub samples: usize,
    /// 0 selects `8 * 2^J`
    pub grid: usize,
}

impl Default for HoelderTask {
    fn default() -> Self {
        HoelderTask {
            budget: HoelderBudget {
                b: 0.5,
                a: 1.5,
                alpha: 1.0,
                theta: 1.0,
            },
            samples: 100,
            grid: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardTask {
    /// grid size for the exported functions, 0 for `max(256, 2^{J+2})`
    pub grid: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapTask {
    #[serde(flatten)]
    pub settings: MapSettings,
    pub verify_directions: usize,
}

impl Default for MapTask {
    fn default() -> Self {
        MapTask {
            settings: MapSettings::default(),
            verify_directions: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcTask {
    pub steps: usize,
    pub burn_in: usize,
    pub proposal_scale: f64,
    pub adapt: bool,
    pub thin: usize,
    pub chains: usize,
    pub trace_coordinates: usize,
}

impl Default for McmcTask {
    fn default() -> Self {
        McmcTask {
            steps: 20_000,
            burn_in: 5_000,
            proposal_scale: 0.5,
            adapt: true,
            thin: 10,
            chains: 2,
            trace_coordinates: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HellingerTask {
    /// data perturbations `y + eps e_component`
    pub perturbations: Vec<f64>,
    pub component: usize,
    pub samples: usize,
}

impl Default for HellingerTask {
    fn default() -> Self {
        HellingerTask {
            perturbations: vec![0.1, 0.05, 0.025],
            component: 0,
            samples: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruncationTask {
    /// Empty means every level below the prior truncation.
    pub levels: Vec<usize>,
    pub samples: usize,
}

impl Default for TruncationTask {
    fn default() -> Self {
        TruncationTask {
            levels: Vec::new(),
            samples: 10_000,
        }
    }
}

/// Replaces `//` and `/* */` comments outside strings by spaces, keeping
/// newlines so that line numbers are preserved.
pub fn strip_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    let mut in_string = false;
    while let Some(c) = chars.next() {
        if in_string {
            out.push(c);
            if c == '\\' {
                if let Some(n) = chars.next() {
                    out.push(n);
                }
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match (c, chars.peek()) {
            ('"', _) => {
                in_string = true;
                out.push(c);
            }
            ('/', Some('/')) => {
                for n in chars.by_ref() {
                    if n == '\n' {
                        out.push('\n');
                        break;
                    }
                    out.push(' ');
                }
            }
            ('/', Some('*')) => {
                chars.next();
                out.push_str("  ");
                let mut prev = ' ';
                for n in chars.by_ref() {
                    out.push(if n == '\n' { '\n' } else { ' ' });
                    if prev == '*' && n == '/' {
                        break;
                    }
                    prev = n;
                }
            }
            _ => out.push(c),
        }
    }
    out
}

/// A configuration problem with the line it refers to (1-based, 0 if unknown).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.line > 0 {
            write!(f, "line {}: {}", self.line, self.message)
        } else {
            write!(f, "{}", self.message)
        }
    }
}

/// Line of the key reached by following `path` through successive quoted keys.
pub fn locate(text: &str, path: &[&str]) -> usize {
    let mut pos = 0;
    for key in path {
        let needle = format!("\"{key}\"");
        match text[pos..].find(&needle) {
            Some(off) => pos += off,
            None => break,
        }
    }
    text[..pos].matches('\n').count() + 1
}

/// Parses a configuration text; errors carry line numbers.
pub fn parse(text: &str) -> std::result::Result<ExperimentConfig, Diagnostic> {
    let stripped = strip_comments(text);
    let config: ExperimentConfig = serde_json::from_str(&stripped).map_err(|e| Diagnostic {
        line: e.line(),
        message: e.to_string(),
    })?;
    if config.schema_version != SCHEMA_VERSION {
        return Err(Diagnostic {
            line: locate(&stripped, &["schema_version"]),
            message: format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                config.schema_version
            ),
        });
    }
    Ok(config)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Diagnostic>,
    pub warnings: Vec<Diagnostic>,
    /// `(t index, gap_condition(t, s, q))` for the Fernique task fields
    pub gaps: Vec<(usize, f64)>,
}

/// Semantic checks on a parsed configuration; never runs an experiment.
pub fn validate(config: &ExperimentConfig, text: &str) -> ValidationReport {
    let text = strip_comments(text);
    let mut report = ValidationReport::default();
    let mut violation = |path: &[&str], message: String| {
        report.violations.push(Diagnostic {
            line: locate(&text, path),
            message,
        })
    };
    let p = &config.prior;
    if !(p.s.lower_bound() > 0.0) {
        violation(&["prior", "s"], format!("PriorSpec requires s^- > 0, got {}", p.s.lower_bound()));
    }
    if p.q.lower_bound() < 1.0 {
        violation(&["prior", "q"], format!("PriorSpec requires q^- >= 1, got {}", p.q.lower_bound()));
    }
    if !(p.delta > 0.0) {
        violation(&["prior", "delta"], format!("PriorSpec requires delta > 0, got {}", p.delta));
    }
    if p.kappa_nodes == 0 {
        violation(&["prior", "kappa_nodes"], "kappa_nodes must be at least 1".into());
    }
    if p.truncation > 20 {
        violation(&["prior", "truncation"], format!("truncation {} is too large (max 20)", p.truncation));
    }
    if let Some(order) = p.family_order {
        if WaveletFamily::daubechies(order).is_err() {
            violation(&["prior", "family_order"], format!("unsupported Daubechies order {order}"));
        }
    }
    if let Some(m) = &config.model {
        if !(m.time > 0.0) {
            violation(&["model"], format!("forward time must be positive, got {}", m.time));
        }
        if m.cutoff_modes == 0 {
            violation(&["model", "cutoff_modes"], "cutoff_modes must be at least 1".into());
        }
        if m.kind == ForwardKind::Fractional {
            if let Err(e) = check_beta_gate(m.beta) {
                violation(&["model", "beta"], e.to_string());
            }
            if !(m.alpha > 0.0 && m.alpha <= 1.0) {
                violation(&["model", "alpha"], format!("fractional alpha must lie in (0, 1], got {}", m.alpha));
            }
        }
    }
    if let Some(o) = &config.observation {
        if let Err(e) = ObservationSetup::try_from(o.clone()) {
            violation(&["observation"], e.to_string());
        }
        if let Some(DataBlock::Values { values }) = &config.data {
            let k = o.points.resolve().len();
            if values.len() != k {
                violation(&["data"], format!("{} data values for {k} observation points", values.len()));
            }
        }
    }
    let t = &config.task;
    if t.truncation.levels.iter().any(|&n| n > p.truncation) {
        violation(&["task", "truncation", "levels"], "truncation levels exceed the prior truncation".into());
    }
    let finest = 2usize << p.truncation;
    for (path, grid) in [
        (["task", "forward", "grid"], t.forward.grid),
        (["task", "sample_prior", "grid"], t.sample_prior.grid),
    ] {
        if grid != 0 && (grid < finest || !grid.is_power_of_two()) {
            violation(&path, format!("grid {grid} must be a power of two of at least {finest}"));
        }
    }
    if t.mcmc.burn_in >= t.mcmc.steps {
        violation(&["task", "mcmc", "burn_in"], "burn_in must be smaller than steps".into());
    }
    if let Err(e) = t.map.settings.validate() {
        violation(&["task", "map"], e.to_string());
    }
    let b = &t.hoelder.budget;
    if let Err(e) = HoelderBudget::new(b.b, b.a, b.alpha, b.theta) {
        violation(&["task", "hoelder", "budget"], e.to_string());
    }
    if report.violations.is_empty() {
        for (i, field) in t.fernique.t.iter().enumerate() {
            report.gaps.push((i, gap_condition(field, &p.s, &p.q, 1)));
        }
        if let Ok(spec) = build_prior(config) {
            if let Ok(gate) = delta_gate(&spec) {
                if spec.delta <= gate.delta_star {
                    report.warnings.push(Diagnostic {
                        line: locate(&text, &["prior", "delta"]),
                        message: format!(
                            "delta = {} does not exceed the estimated threshold {:.4}",
                            spec.delta, gate.delta_star
                        ),
                    });
                }
            }
            if !spec.family.admits(&spec.s, &spec.q).unwrap_or(false) {
                report.warnings.push(Diagnostic {
                    line: locate(&text, &["prior", "family_order"]),
                    message: format!(
                        "Daubechies order {} is below the regularity threshold of (s, q)",
                        spec.family.order()
                    ),
                });
            }
        }
    }
    report
}

fn missing(block: &str) -> Error {
    Error::Config(format!("this subcommand needs a \"{block}\" block"))
}

/// The prior measure; its seed is the `prior` substream of the root seed.
pub fn build_prior(config: &ExperimentConfig) -> Result<PriorSpec> {
    prior_with_seed(config, rng::derive_key(config.seed, "prior", &[]))
}

fn prior_with_seed(config: &ExperimentConfig, seed: u64) -> Result<PriorSpec> {
    let p = &config.prior;
    let mut spec = PriorSpec::new(p.s.clone(), p.q.clone(), p.delta, p.truncation, seed)?;
    if let Some(order) = p.family_order {
        spec.family = WaveletFamily::daubechies(order)?;
    }
    spec.kappa = KappaQuadrature::uniform(p.kappa_nodes);
    spec.mean = p.mean.clone();
    spec.validate()?;
    Ok(spec)
}

pub fn build_model(config: &ExperimentConfig) -> Result<ForwardModel> {
    ForwardModel::new(config.model.clone().ok_or_else(|| missing("model"))?)
}

pub fn build_setup(config: &ExperimentConfig) -> Result<ObservationSetup> {
    config.observation.clone().ok_or_else(|| missing("observation"))?.try_into()
}

/// Ground truth for simulated data: a draw from the same prior under the
/// `truth` substream.
pub fn truth(config: &ExperimentConfig) -> Result<PriorSample> {
    let draw = match &config.data {
        Some(DataBlock::Simulate { truth_draw }) => *truth_draw,
        _ => 0,
    };
    let spec = prior_with_seed(config, rng::derive_key(config.seed, "truth", &[]))?;
    PriorSampler::new(spec)?.sample(draw)
}

/// Data from the config, simulating with the `noise` substream if needed.
pub fn build_data(config: &ExperimentConfig, model: &ForwardModel, setup: &ObservationSetup) -> Result<Vec<f64>> {
    match &config.data {
        Some(DataBlock::Values { values }) => Ok(values.clone()),
        _ => {
            let truth = truth(config)?;
            let family = &build_prior(config)?.family;
            let basis = SpectralBasis::new(family, truth.truncation, model.cutoff_modes());
            let spectrum = Spectrum::from_coefficients(&truth.coeffs, &basis, model.cutoff_modes())?;
            let mut noise = rng::stream(config.seed, "noise", &[]);
            Ok(simulate_data(&spectrum, model, setup, &mut noise))
        }
    }
}

pub fn build_handle(config: &ExperimentConfig) -> Result<PosteriorHandle> {
    let model = build_model(config)?;
    let setup = build_setup(config)?;
    let data = build_data(config, &model, &setup)?;
    PosteriorHandle::new(build_prior(config)?, model, setup, data)
}

/// Hex SHA-256 of the canonical JSON form of the configuration.
pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let canonical = serde_json::to_vec(config)?;
    Ok(Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect())
}
