//! Python bindings: beliefs, the exact planner, VI-COR lookahead values,
//! the statistics helpers and the experiment harness.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use corrbandit_core::gaussian::{interval_mass, partial_first_moment, wilcoxon_signed_rank};
use corrbandit_core::harness::{run_and_emit, ExperimentConfig, RunResult};
use corrbandit_core::planner::{plan, ExactPlan};
use corrbandit_core::policies::vi_cor_values;
use corrbandit_core::{
    belief, compare_policies, correlated_update, predictive, run_experiment, BeliefState, Error,
    ErrorClass, GaussianParams, Interval, ObservationDensity, SeedRng, UpdateMode, ViCorConfig,
};
use rand::SeedableRng;

create_exception!(corrbandit, ConfigError, PyValueError, "Invalid configuration or arguments.");
create_exception!(corrbandit, DataError, PyException, "Unreadable or malformed data.");
create_exception!(corrbandit, InternalError, PyException, "Numerical failure or broken invariant.");

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.class() {
        ErrorClass::Config => ConfigError::new_err(msg),
        ErrorClass::Data => DataError::new_err(msg),
        ErrorClass::Internal => InternalError::new_err(msg),
    }
}

fn parse_mode(mode: &str) -> PyResult<UpdateMode> {
    match mode {
        "joint_gaussian" => Ok(UpdateMode::JointGaussian),
        "diagonal_only" => Ok(UpdateMode::DiagonalOnly),
        other => Err(ConfigError::new_err(format!("unknown update mode '{other}'"))),
    }
}

fn density(predictive: bool) -> ObservationDensity {
    if predictive {
        ObservationDensity::Predictive
    } else {
        ObservationDensity::Belief
    }
}

/// Gaussian belief over the arms' mean payoffs plus the observation noise.
#[pyclass(name = "Belief", module = "corrbandit", frozen)]
struct PyBelief {
    inner: BeliefState,
}

#[pymethods]
impl PyBelief {
    #[new]
    #[pyo3(signature = (theta, cov, noise_var, mode = "joint_gaussian"))]
    fn new(theta: Vec<f64>, cov: Vec<Vec<f64>>, noise_var: f64, mode: &str) -> PyResult<Self> {
        let rows: Vec<&[f64]> = cov.iter().map(Vec::as_slice).collect();
        let inner = BeliefState::from_rows(&theta, &rows, noise_var, parse_mode(mode)?)
            .map_err(|e| ConfigError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }

    /// The two-arm worked example.
    #[staticmethod]
    #[pyo3(signature = (mode = "diagonal_only"))]
    fn toy(mode: &str) -> PyResult<Self> {
        Ok(Self { inner: belief::toy_belief(parse_mode(mode)?) })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(|e| ConfigError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| InternalError::new_err(e.to_string()))
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.inner.theta().iter().copied().collect()
    }

    #[getter]
    fn cov(&self) -> Vec<Vec<f64>> {
        let c = self.inner.cov();
        (0..c.nrows()).map(|i| c.row(i).iter().copied().collect()).collect()
    }

    #[getter]
    fn noise_var(&self) -> f64 {
        self.inner.noise_var()
    }

    #[getter]
    fn arms(&self) -> usize {
        self.inner.arms()
    }

    /// Posterior after observing payoff `x` from `arm`.
    fn update(&self, arm: usize, x: f64) -> PyResult<Self> {
        Ok(Self { inner: correlated_update(&self.inner, arm, x).map_err(to_py)? })
    }

    /// `(mean, variance)` of the next payoff from `arm`.
    fn predictive(&self, arm: usize) -> PyResult<(f64, f64)> {
        let p = predictive(&self.inner, arm).map_err(to_py)?;
        Ok((p.mean, p.variance))
    }

    /// Exact plan for horizon 1 or 2. Arms are 0-indexed.
    #[pyo3(signature = (horizon, predictive = false))]
    fn plan<'py>(&self, py: Python<'py>, horizon: usize, predictive: bool) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        match plan(&self.inner, horizon, density(predictive)).map_err(to_py)? {
            ExactPlan::OneStep { value, arm } => {
                d.set_item("value", value)?;
                d.set_item("arm", arm)?;
            }
            ExactPlan::TwoStep(t) => {
                d.set_item("value", t.value)?;
                d.set_item("first_arm", t.first_arm)?;
                d.set_item("branch_values", t.branch_values.clone())?;
                let regions: Vec<(f64, f64, usize)> =
                    t.regions.iter().map(|r| (r.interval.lower, r.interval.upper, r.arm)).collect();
                d.set_item("second_step", regions)?;
            }
        }
        Ok(d)
    }

    /// Monte-Carlo lookahead values of each first arm at step `t` of `horizon`.
    #[pyo3(signature = (t, horizon, samples = 64, depth = 2, seed = 0, predictive = false))]
    fn vi_cor_values(
        &self,
        t: usize,
        horizon: usize,
        samples: usize,
        depth: usize,
        seed: u64,
        predictive: bool,
    ) -> PyResult<Vec<f64>> {
        let cfg = ViCorConfig { samples, depth, density: density(predictive), ..ViCorConfig::default() };
        let mut rng = SeedRng::seed_from_u64(seed);
        vi_cor_values(&self.inner, t, horizon, &cfg, &mut rng).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Belief(theta={:?}, noise_var={})", self.theta(), self.inner.noise_var())
    }
}

/// `∫_lower^upper x N(x; mean, variance) dx`.
#[pyfunction]
fn partial_moment(lower: f64, upper: f64, mean: f64, variance: f64) -> PyResult<f64> {
    let iv = Interval::new(lower, upper).map_err(to_py)?;
    let p = GaussianParams::new(mean, variance).map_err(to_py)?;
    partial_first_moment(iv, p).map_err(to_py)
}

/// Probability mass of `[lower, upper]` under `N(mean, variance)`.
#[pyfunction]
fn mass(lower: f64, upper: f64, mean: f64, variance: f64) -> PyResult<f64> {
    let iv = Interval::new(lower, upper).map_err(to_py)?;
    let p = GaussianParams::new(mean, variance).map_err(to_py)?;
    interval_mass(iv, p).map_err(to_py)
}

/// Two-sided Wilcoxon signed-rank p-value of paired samples.
#[pyfunction]
fn wilcoxon(pairs: Vec<(f64, f64)>) -> PyResult<f64> {
    wilcoxon_signed_rank(&pairs).map_err(to_py)
}

fn run_dict<'py>(py: Python<'py>, r: &RunResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("policy", r.policy.to_string())?;
    d.set_item("chunk", r.chunk)?;
    d.set_item("seed", r.seed)?;
    d.set_item("noise_var", r.noise_var)?;
    d.set_item("cumulative", r.cumulative)?;
    d.set_item("golden_value", r.golden_value)?;
    d.set_item("normalized_score", r.normalized_score)?;
    d.set_item("selections", r.selections.clone())?;
    d.set_item("payoffs", r.payoffs.clone())?;
    Ok(d)
}

/// Runs an experiment from a JSON config string; returns one dict per run.
#[pyfunction]
fn run<'py>(py: Python<'py>, config_json: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg: ExperimentConfig = serde_json::from_str(config_json).map_err(|e| ConfigError::new_err(e.to_string()))?;
    let results = py.detach(|| run_experiment(&cfg)).map_err(to_py)?;
    results.iter().map(|r| run_dict(py, r)).collect()
}

/// Runs a config file and writes the output files to `out_dir`.
#[pyfunction]
fn run_file(py: Python<'_>, config_path: PathBuf, out_dir: PathBuf) -> PyResult<usize> {
    py.detach(|| {
        let cfg = ExperimentConfig::load(&config_path)?;
        run_and_emit(&cfg, &out_dir).map(|r| r.len())
    })
    .map_err(to_py)
}

/// Comparison table of a config's runs as a JSON string.
#[pyfunction]
fn compare(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg: ExperimentConfig = serde_json::from_str(config_json).map_err(|e| ConfigError::new_err(e.to_string()))?;
    let table = py.detach(|| run_experiment(&cfg).and_then(|r| compare_policies(&r))).map_err(to_py)?;
    serde_json::to_string(&table).map_err(|e| InternalError::new_err(e.to_string()))
}

#[pymodule]
fn corrbandit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBelief>()?;
    m.add_function(wrap_pyfunction!(partial_moment, m)?)?;
    m.add_function(wrap_pyfunction!(mass, m)?)?;
    m.add_function(wrap_pyfunction!(wilcoxon, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_file, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("DataError", m.py().get_type::<DataError>())?;
    m.add("InternalError", m.py().get_type::<InternalError>())?;
    Ok(())
}
