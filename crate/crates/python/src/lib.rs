use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use relaxrl::bench::{self, Algorithm};
use relaxrl::envelope::{self, SampledFunction};
use relaxrl::zoo::{self, Family, LinkBudgetParams};
use relaxrl::{BinaryAssignment, MixedProblem, RelaxConfig, SearchConfig};

fn to_py(e: relaxrl::Error) -> PyErr {
    match e {
        relaxrl::Error::Io(_) | relaxrl::Error::Numerical(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// A benchmark instance (sp1, sp2 or bandwidth).
#[pyclass(name = "Instance", frozen)]
struct PyInstance {
    inner: zoo::Instance,
    seed: Option<u64>,
}

#[pymethods]
impl PyInstance {
    #[staticmethod]
    #[pyo3(signature = (family, n, m, q=None, seed=0))]
    fn generate(family: &str, n: usize, m: usize, q: Option<f64>, seed: u64) -> PyResult<Self> {
        let family: Family = family.parse().map_err(to_py)?;
        let inner = bench::generate(family, n, m, q, seed).map_err(to_py)?;
        Ok(Self { inner, seed: Some(seed) })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let file = bench::InstanceFile::load(&path).map_err(to_py)?;
        let inner = file.to_instance().map_err(to_py)?;
        Ok(Self { inner, seed: file.seed })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        bench::save_instance(&self.inner, self.seed, &path).map_err(to_py)
    }

    #[getter]
    fn family(&self) -> String {
        self.inner.family().to_string()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.inner.dims().shape()
    }

    /// Value of the root relaxation, the normalizer for reported objectives.
    fn root_bound(&self, py: Python<'_>) -> PyResult<f64> {
        py.detach(|| relaxrl::relax::root_bound(&self.inner, &RelaxConfig::default()))
            .map_err(to_py)
    }

    /// Inner-solve objective of a complete assignment, `None` when it is infeasible.
    fn evaluate(&self, columns: Vec<usize>) -> PyResult<Option<f64>> {
        let a = BinaryAssignment::new(columns, self.inner.dims().n_cols).map_err(to_py)?;
        match self.inner.inner_solve(&a) {
            Ok(s) => Ok(Some(s.objective)),
            Err(relaxrl::Error::Infeasible) => Ok(None),
            Err(e) => Err(to_py(e)),
        }
    }

    fn __repr__(&self) -> String {
        let (n, m) = self.inner.dims().shape();
        format!("Instance(family='{}', n={n}, m={m})", self.inner.family())
    }
}

#[pyclass(name = "SolveResult", frozen, get_all)]
struct PySolveResult {
    algorithm: String,
    status: String,
    objective: Option<f64>,
    normalized: Option<f64>,
    root_bound: Option<f64>,
    assignment: Option<Vec<usize>>,
    steps: usize,
    wall_time_s: f64,
    termination: String,
    /// `(elapsed_s, step, best_objective, best_normalized)` rows.
    trace: Vec<(f64, usize, f64, f64)>,
}

#[pymethods]
impl PySolveResult {
    fn __repr__(&self) -> String {
        format!(
            "SolveResult(algorithm='{}', status='{}', objective={:?}, normalized={:?}, steps={})",
            self.algorithm, self.status, self.objective, self.normalized, self.steps
        )
    }
}

/// Runs `algo` ("hybrid", "rl", "bnb" or "oracle") on an instance.
#[pyfunction]
#[pyo3(signature = (instance, algo="hybrid", seed=0, time_limit=500.0, episodes=50_000, alpha=0.5, gamma=0.99))]
#[allow(clippy::too_many_arguments)]
fn solve(
    py: Python<'_>,
    instance: &PyInstance,
    algo: &str,
    seed: u64,
    time_limit: f64,
    episodes: usize,
    alpha: f64,
    gamma: f64,
) -> PyResult<PySolveResult> {
    let algorithm: Algorithm = algo.parse().map_err(to_py)?;
    let cfg = SearchConfig {
        seed,
        time_limit,
        max_episodes: episodes,
        learning_rate: alpha,
        discount: gamma,
        ..SearchConfig::default()
    };
    let result = py.detach(|| bench::run_algorithm(&instance.inner, "python", algorithm, &cfg));
    let s = result.summary;
    if let Some(e) = s.error {
        return Err(PyValueError::new_err(e));
    }
    let trace = result
        .trace
        .map(|t| {
            t.points
                .iter()
                .map(|p| (p.elapsed_s, p.step, p.best_objective, p.best_normalized))
                .collect()
        })
        .unwrap_or_default();
    Ok(PySolveResult {
        algorithm: s.algorithm.to_string(),
        status: serde_status(s.status),
        objective: s.objective,
        normalized: s.normalized,
        root_bound: s.root_bound,
        assignment: s.assignment,
        steps: s.steps,
        wall_time_s: s.wall_time_s,
        termination: s.termination_reason,
        trace,
    })
}

fn serde_status(status: bench::RunStatus) -> String {
    match status {
        bench::RunStatus::Ok => "ok",
        bench::RunStatus::Infeasible => "infeasible",
        bench::RunStatus::Exhausted => "exhausted",
        bench::RunStatus::Failed => "failed",
    }
    .to_string()
}

/// Euclidean projection onto the probability simplex.
#[pyfunction]
fn project_row_simplex(v: Vec<f64>) -> PyResult<Vec<f64>> {
    relaxrl::relax::project_row_simplex(&v).map_err(to_py)
}

/// Least concave majorant of samples on a uniform grid.
#[pyfunction]
fn upper_envelope(grid: Vec<f64>, values: Vec<f64>) -> PyResult<Vec<f64>> {
    let f = SampledFunction::new(grid, values).map_err(to_py)?;
    Ok(envelope::upper_envelope(&f).values().to_vec())
}

/// Greatest convex minorant of samples on a uniform grid.
#[pyfunction]
fn biconjugate(grid: Vec<f64>, values: Vec<f64>) -> PyResult<Vec<f64>> {
    let f = SampledFunction::new(grid, values).map_err(to_py)?;
    Ok(envelope::biconjugate(&f).values().to_vec())
}

/// Linear SNR at a distance in meters under the default link budget.
#[pyfunction]
fn link_gamma(distance_m: f64) -> f64 {
    zoo::link_gamma(&LinkBudgetParams::default(), distance_m)
}

#[pymodule]
pub fn relaxrl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyInstance>()?;
    m.add_class::<PySolveResult>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(project_row_simplex, m)?)?;
    m.add_function(wrap_pyfunction!(upper_envelope, m)?)?;
    m.add_function(wrap_pyfunction!(biconjugate, m)?)?;
    m.add_function(wrap_pyfunction!(link_gamma, m)?)?;
    Ok(())
}
