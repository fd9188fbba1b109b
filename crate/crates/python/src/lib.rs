//! Python bindings for the `ctxsel` core: synthetic problems, single policy
//! runs, the optimal-allocation solver and the KG closed form.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ctxsel::harness::{run_experiment, write_result, ExperimentConfig};
use ctxsel::model::ContextTable;
use ctxsel::policy::{GpSettings, InitRule, PolicyKind, RunConfig};
use ctxsel::problem::{contextual_pcs, make_synthetic, ContextualProblem, PcsMode, SyntheticSpec, TestFunction, WeightSpec};
use ctxsel::rate::RateProblem;

fn to_py(e: ctxsel::Error) -> PyErr {
    if e.is_numerical() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

/// A contextual ranking-and-selection instance with known truth.
#[pyclass(name = "Problem", frozen)]
struct PyProblem {
    inner: ContextualProblem,
}

#[pymethods]
impl PyProblem {
    /// Build from an explicit `truth[k][c]`, context coordinates and noise sd.
    #[new]
    #[pyo3(signature = (truth, contexts, noise_sd, weights=None))]
    fn new(truth: Vec<Vec<f64>>, contexts: Vec<Vec<f64>>, noise_sd: f64, weights: Option<Vec<f64>>) -> PyResult<Self> {
        let nc = contexts.len();
        let nk = truth.len();
        let table = ContextTable::new(contexts).map_err(to_py)?;
        let weights = weights.unwrap_or_else(|| vec![1.0 / nc as f64; nc]);
        let inner = ContextualProblem::new(table, weights, truth, vec![vec![noise_sd; nc]; nk], 0).map_err(to_py)?;
        Ok(PyProblem { inner })
    }

    /// Seeded synthetic instance of a benchmark function.
    #[staticmethod]
    #[pyo3(signature = (function, alternatives, contexts, seed, weights="uniform"))]
    fn synthetic(function: &str, alternatives: usize, contexts: usize, seed: u64, weights: &str) -> PyResult<Self> {
        let f = TestFunction::parse(function).map_err(to_py)?;
        let weights = match weights {
            "uniform" => WeightSpec::Uniform,
            "branin" => WeightSpec::Explicit(ctxsel::problem::BRANIN_WEIGHTS.to_vec()),
            other => return Err(PyValueError::new_err(format!("unknown weights `{other}`"))),
        };
        let spec = SyntheticSpec::new(f, alternatives, contexts, weights);
        Ok(PyProblem {
            inner: make_synthetic(&spec, seed).map_err(to_py)?,
        })
    }

    #[getter]
    fn truth(&self) -> Vec<Vec<f64>> {
        self.inner.truth().to_vec()
    }

    #[getter]
    fn contexts(&self) -> Vec<Vec<f64>> {
        self.inner.contexts().rows().to_vec()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    #[getter]
    fn noise_sd(&self) -> Vec<Vec<f64>> {
        self.inner.noise_sd().to_vec()
    }

    #[getter]
    fn true_best(&self) -> Vec<usize> {
        self.inner.true_best().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(alternatives={}, contexts={})",
            self.inner.n_alternatives(),
            self.inner.n_contexts()
        )
    }
}

/// Run one policy and return its final state as a dict.
///
/// `prior_variance` switches to the diagonal (uninformative) prior with
/// frozen hyperparameters.
#[pyfunction]
#[pyo3(signature = (problem, policy, budget, seed, init_per_pair=2, retrain_every=10, prior_variance=None))]
fn run_policy<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    policy: &str,
    budget: usize,
    seed: u64,
    init_per_pair: usize,
    retrain_every: usize,
    prior_variance: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let kind = PolicyKind::parse(policy).map_err(to_py)?;
    let mut cfg = RunConfig::new(kind, budget, InitRule::PerPair(init_per_pair));
    cfg.retrain_every = retrain_every;
    if let Some(v) = prior_variance {
        cfg.gp = GpSettings::uninformative(v, problem.inner.contexts().dim()).map_err(to_py)?;
        cfg.retrain_every = 0;
    }
    let problem = &problem.inner;
    let t = py
        .detach(|| ctxsel::policy::run_policy(problem, &cfg, seed))
        .map_err(to_py)?;
    let pcs_e = contextual_pcs(t.final_selection(), problem.true_best(), problem.weights(), PcsMode::Expected)
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("counts", t.state.count_matrix())?;
    out.set_item("selected", t.final_selection().to_vec())?;
    out.set_item("pcs_e", pcs_e)?;
    out.set_item("iterations", t.iterations())?;
    out.set_item("wall_seconds", t.total_wall_ns() as f64 * 1e-9)?;
    out.set_item(
        "trace",
        t.records.iter().map(|r| (r.n, r.selected.clone())).collect::<Vec<_>>(),
    )?;
    Ok(out)
}

/// Optimal static allocation for known means and noise variances.
#[pyfunction]
fn optimal_allocation<'py>(
    py: Python<'py>,
    truth: Vec<Vec<f64>>,
    noise_var: Vec<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let rp = RateProblem::new(truth, noise_var).map_err(to_py)?;
    let report = rp.solve_optimal_allocation().map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("allocation", report.allocation.clone())?;
    out.set_item("best", report.best.clone())?;
    out.set_item("g_min", report.g_min)?;
    out.set_item("eta_star", report.eta_star())?;
    out.set_item("certified", report.certified)?;
    Ok(out)
}

/// Expected gain `E[max(a, b + sZ)] − max(a, b)`.
#[pyfunction]
fn kg_single(a: f64, b: f64, s: f64) -> PyResult<f64> {
    ctxsel::policy::kg_single(a, b, s).map_err(to_py)
}

/// Run a config file and write its results; returns the output directory.
#[pyfunction]
#[pyo3(signature = (path, force=false))]
fn run_config(py: Python<'_>, path: std::path::PathBuf, force: bool) -> PyResult<std::path::PathBuf> {
    py.detach(|| {
        let cfg = ExperimentConfig::from_file(&path)?;
        let dir = cfg.resolved_output_dir();
        let result = run_experiment(&cfg)?;
        write_result(&result, &dir, force)?;
        Ok(dir)
    })
    .map_err(to_py)
}

#[pymodule]
#[pyo3(name = "ctxsel")]
fn ctxsel_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(run_policy, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_allocation, m)?)?;
    m.add_function(wrap_pyfunction!(kg_single, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
