//! Python bindings: exponent fields, priors, forward models and posteriors.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use varbesov::bayes::{self, ChainConfig, PosteriorHandle};
use varbesov::exponent::ExponentField;
use varbesov::forward::{self, ForwardModel, ObservationSetup};
use varbesov::map::{self, MapProblem, MapSettings};
use varbesov::prior::{self, PriorSampler, PriorSpec};
use varbesov::wavelet::{self, Convention, WaveletCoefficients, WaveletFamily};

fn py_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Variable exponent on the torus, e.g. `Exponent.cosine(1.5, 0.3)`.
#[pyclass(name = "Exponent", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyExponent {
    inner: ExponentField,
}

#[pymethods]
impl PyExponent {
    #[staticmethod]
    fn constant(value: f64) -> Self {
        PyExponent {
            inner: ExponentField::constant(value),
        }
    }

    #[staticmethod]
    fn cosine(c0: f64, amplitude: f64) -> Self {
        PyExponent {
            inner: ExponentField::cosine(c0, amplitude),
        }
    }

    #[staticmethod]
    #[pyo3(signature = (c0, cos, sin = Vec::new()))]
    fn trig(c0: f64, cos: Vec<f64>, sin: Vec<f64>) -> PyResult<Self> {
        Ok(PyExponent {
            inner: ExponentField::trig(c0, cos, sin).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn ramp(low: f64, high: f64, rise: f64, fall: f64, width: f64) -> PyResult<Self> {
        Ok(PyExponent {
            inner: ExponentField::ramp(low, high, rise, fall, width).map_err(py_err)?,
        })
    }

    /// Parses the JSON form used in configuration files.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyExponent {
            inner: serde_json::from_str(text).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(py_err)
    }

    fn __call__(&self, x: f64) -> f64 {
        self.inner.evaluate(x)
    }

    #[getter]
    fn lower_bound(&self) -> f64 {
        self.inner.lower_bound()
    }

    #[getter]
    fn upper_bound(&self) -> f64 {
        self.inner.upper_bound()
    }

    fn __repr__(&self) -> String {
        format!("Exponent({})", self.to_json().unwrap_or_default())
    }
}

/// Truncated variable-index Besov prior.
#[pyclass(name = "Prior", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyPrior {
    sampler: PriorSampler,
}

#[pymethods]
impl PyPrior {
    #[new]
    #[pyo3(signature = (s, q, delta, truncation, seed = 0))]
    fn new(s: &PyExponent, q: &PyExponent, delta: f64, truncation: usize, seed: u64) -> PyResult<Self> {
        let spec = PriorSpec::new(s.inner.clone(), q.inner.clone(), delta, truncation, seed).map_err(py_err)?;
        Ok(PyPrior {
            sampler: PriorSampler::new(spec).map_err(py_err)?,
        })
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.sampler.spec().dimension()
    }

    #[getter]
    fn truncation(&self) -> usize {
        self.sampler.spec().truncation
    }

    /// Flat `u`-convention coefficients of draw `draw`.
    fn sample(&self, draw: u64) -> PyResult<Vec<f64>> {
        Ok(self.sampler.sample(draw).map_err(py_err)?.coeffs.to_flat())
    }

    /// Draw `draw` evaluated on the grid `i / grid`.
    fn synthesize(&self, draw: u64, grid: usize) -> PyResult<Vec<f64>> {
        let sample = self.sampler.sample(draw).map_err(py_err)?;
        self.sampler.synthesize(&sample, grid).map_err(py_err)
    }

    /// Modular of draw `draw` in the prior's own smoothness.
    fn modular(&self, draw: u64) -> PyResult<f64> {
        let sample = self.sampler.sample(draw).map_err(py_err)?;
        let spec = self.sampler.spec().modular_spec().map_err(py_err)?;
        varbesov::modular::modular_value(&sample.lambda(), &spec).map_err(py_err)
    }

    /// `(mean, stderr)` of `exp(alpha * rho_t)` over draws `0..count`.
    fn fernique(&self, t: &PyExponent, alpha: f64, count: usize) -> PyResult<(f64, f64)> {
        prior::fernique_exp_moment(self.sampler.spec(), &t.inner, alpha, count).map_err(py_err)
    }

    fn with_truncation(&self, truncation: usize) -> PyResult<Self> {
        Ok(PyPrior {
            sampler: PriorSampler::new(self.sampler.spec().with_truncation(truncation)).map_err(py_err)?,
        })
    }
}

#[pyclass(name = "ForwardModel", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyForwardModel {
    inner: ForwardModel,
}

#[pymethods]
impl PyForwardModel {
    #[staticmethod]
    #[pyo3(signature = (t, cutoff_modes = 128))]
    fn heat(t: f64, cutoff_modes: usize) -> PyResult<Self> {
        Ok(PyForwardModel {
            inner: ForwardModel::heat(t, cutoff_modes).map_err(py_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (alpha, beta, t, cutoff_modes = 128))]
    fn fractional(alpha: f64, beta: f64, t: f64, cutoff_modes: usize) -> PyResult<Self> {
        Ok(PyForwardModel {
            inner: ForwardModel::fractional(alpha, beta, t, cutoff_modes).map_err(py_err)?,
        })
    }

    fn multiplier(&self, k: usize) -> f64 {
        self.inner.multiplier(k)
    }

    /// Propagates grid samples `f(i / n)`.
    fn propagate(&self, values: Vec<f64>) -> PyResult<Vec<f64>> {
        forward::propagate_grid(&values, &self.inner).map_err(py_err)
    }
}

/// Posterior for point observations with isotropic Gaussian noise.
#[pyclass(name = "Posterior", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyPosterior {
    inner: PosteriorHandle,
}

#[pymethods]
impl PyPosterior {
    #[new]
    fn new(prior: &PyPrior, model: &PyForwardModel, points: Vec<f64>, variance: f64, data: Vec<f64>) -> PyResult<Self> {
        let setup = ObservationSetup::isotropic(points, variance).map_err(py_err)?;
        let inner = PosteriorHandle::new(prior.sampler.spec().clone(), model.inner.clone(), setup, data)
            .map_err(py_err)?;
        Ok(PyPosterior { inner })
    }

    fn with_data(&self, data: Vec<f64>) -> PyResult<Self> {
        Ok(PyPosterior {
            inner: self.inner.with_data(data).map_err(py_err)?,
        })
    }

    /// Noise-free observations of flat `u` coefficients.
    fn predict(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        let c = WaveletCoefficients::from_flat(Convention::U, &u).map_err(py_err)?;
        self.inner.predict(&c).map_err(py_err)
    }

    fn potential(&self, u: Vec<f64>) -> PyResult<f64> {
        let c = WaveletCoefficients::from_flat(Convention::U, &u).map_err(py_err)?;
        self.inner.potential(&c).map_err(py_err)
    }

    /// `(Z, stderr)` from prior draws `0..count`.
    fn normalizing_constant(&self, py: Python<'_>, count: usize) -> PyResult<(f64, f64)> {
        let z = py.detach(|| bayes::estimate_z(&self.inner, count)).map_err(py_err)?;
        Ok((z.z, z.stderr))
    }

    /// `(distance, stderr)` to another posterior with the same prior.
    fn hellinger(&self, py: Python<'_>, other: &PyPosterior, count: usize) -> PyResult<(f64, f64)> {
        let h = py
            .detach(|| bayes::hellinger(&self.inner, &other.inner, count))
            .map_err(py_err)?;
        Ok((h.distance, h.stderr))
    }

    /// `[(N, distance, stderr)]` against truncated inputs.
    fn truncation_study(&self, py: Python<'_>, levels: Vec<usize>, count: usize) -> PyResult<Vec<(usize, f64, f64)>> {
        let rows = py
            .detach(|| bayes::truncation_study(&self.inner, &levels, count))
            .map_err(py_err)?;
        Ok(rows.into_iter().map(|r| (r.level, r.hellinger, r.stderr)).collect())
    }

    #[pyo3(signature = (steps, burn_in, proposal_scale = 0.5, seed = 0, thin = 1))]
    fn mcmc<'py>(
        &self,
        py: Python<'py>,
        steps: usize,
        burn_in: usize,
        proposal_scale: f64,
        seed: u64,
        thin: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let mut config = ChainConfig::new(steps, burn_in, proposal_scale, seed).map_err(py_err)?;
        config.adapt = true;
        config.thin = thin;
        let chain = py.detach(|| bayes::run_mcmc(&self.inner, &config)).map_err(py_err)?;
        let out = PyDict::new(py);
        out.set_item("xi", chain.states)?;
        out.set_item("phi", chain.potentials)?;
        out.set_item("acceptance_rate", chain.acceptance_rate)?;
        out.set_item("final_scale", chain.final_scale)?;
        Ok(out)
    }

    /// MAP estimate; returns the flat `lambda` minimizer and its objective.
    #[pyo3(signature = (restarts = 3, seed = 0))]
    fn map_estimate<'py>(&self, py: Python<'py>, restarts: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
        let settings = MapSettings {
            restarts,
            seed,
            ..MapSettings::default()
        };
        let problem = MapProblem::new(self.inner.clone(), settings).map_err(py_err)?;
        let solution = py.detach(|| map::solve_map(&problem)).map_err(py_err)?;
        let out = PyDict::new(py);
        out.set_item("coefficients", solution.coeffs.to_flat())?;
        out.set_item("objective", solution.i_value)?;
        out.set_item("iterations", solution.iterations)?;
        out.set_item("converged", solution.converged)?;
        Ok(out)
    }
}

#[pyfunction]
#[pyo3(signature = (alpha, z, tol = forward::ML_TOLERANCE))]
fn mittag_leffler(alpha: f64, z: f64, tol: f64) -> PyResult<f64> {
    forward::mittag_leffler(alpha, z, tol).map_err(py_err)
}

/// Periodic wavelet transform of `2^L` samples; flat `u` coefficients.
#[pyfunction]
#[pyo3(signature = (samples, order = 6))]
fn analyze(samples: Vec<f64>, order: usize) -> PyResult<Vec<f64>> {
    let family = WaveletFamily::daubechies(order).map_err(py_err)?;
    Ok(wavelet::analyze(&samples, &family).map_err(py_err)?.to_flat())
}

#[pyfunction]
#[pyo3(signature = (coefficients, grid, order = 6))]
fn synthesize(coefficients: Vec<f64>, grid: usize, order: usize) -> PyResult<Vec<f64>> {
    let family = WaveletFamily::daubechies(order).map_err(py_err)?;
    let c = WaveletCoefficients::from_flat(Convention::U, &coefficients).map_err(py_err)?;
    wavelet::synthesize(&c, &family, grid).map_err(py_err)
}

#[pymodule]
pub fn varbesov_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyExponent>()?;
    m.add_class::<PyPrior>()?;
    m.add_class::<PyForwardModel>()?;
    m.add_class::<PyPosterior>()?;
    m.add_function(wrap_pyfunction!(mittag_leffler, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
