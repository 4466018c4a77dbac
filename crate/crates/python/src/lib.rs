//! Python bindings for `gridrisk-core`.

use gridrisk_core::cascade_sim::{self, ControlSchedule, Epsilon, TripConfig, TripMode};
use gridrisk_core::{dc_powerflow, grid_model, worst_case_id, CaseError, IdentificationConfig, SolveError};
use nalgebra::DVector;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

fn case_err(e: CaseError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn solve_err(e: SolveError) -> PyErr {
    match e {
        SolveError::Config(_) | SolveError::Dimension { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match value {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, v) in map {
                dict.set_item(k, to_py(py, v)?)?;
            }
            dict.into_any()
        }
    })
}

fn serialize<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let json = serde_json::to_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &json)
}

fn parse_mode(mode: &str) -> PyResult<TripMode> {
    mode.parse().map_err(PyValueError::new_err)
}

fn epsilon_from(values: Vec<f64>) -> Epsilon {
    match values.as_slice() {
        [single] => Epsilon::Scalar(*single),
        _ => Epsilon::PerStep(values),
    }
}

/// Immutable grid description.
#[pyclass(name = "Network", frozen)]
pub struct PyNetwork {
    inner: grid_model::Network,
}

#[pymethods]
impl PyNetwork {
    /// Parses a JSON case document.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: grid_model::parse_case(text).map_err(case_err)? })
    }

    /// Reads and parses a JSON case file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PyValueError::new_err(format!("{path}: {e}")))?;
        Self::from_json(&text)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn n_buses(&self) -> usize {
        self.inner.n_buses()
    }

    #[getter]
    fn n_branches(&self) -> usize {
        self.inner.n_branches()
    }

    #[getter]
    fn base_admittances(&self) -> Vec<f64> {
        self.inner.base_admittances().iter().copied().collect()
    }

    #[getter]
    fn thresholds(&self) -> Vec<f64> {
        self.inner.thresholds().iter().copied().collect()
    }

    #[getter]
    fn injections(&self) -> Vec<f64> {
        self.inner.injections().iter().copied().collect()
    }

    /// Branch endpoints as 1-based bus ids.
    #[getter]
    fn branches(&self) -> Vec<(usize, usize)> {
        self.inner.branches().iter().map(|b| (b.from, b.to)).collect()
    }

    fn __repr__(&self) -> String {
        format!("Network(n_buses={}, n_branches={})", self.inner.n_buses(), self.inner.n_branches())
    }
}

impl PyNetwork {
    fn admittances(&self, y: Option<Vec<f64>>) -> PyResult<DVector<f64>> {
        match y {
            None => Ok(self.inner.base_admittances()),
            Some(v) if v.len() == self.inner.n_branches() => Ok(DVector::from_vec(v)),
            Some(v) => Err(PyValueError::new_err(format!(
                "admittance vector has length {}, expected {}",
                v.len(),
                self.inner.n_branches()
            ))),
        }
    }
}

/// Trip factor of one branch: smooth logistic or hard breaker.
#[pyfunction]
#[pyo3(signature = (flow, threshold, sigma = 1.0, mode = "smooth"))]
fn trip_factor(flow: f64, threshold: f64, sigma: f64, mode: &str) -> PyResult<f64> {
    let cfg = TripConfig { sigma, mode: parse_mode(mode)?, ..TripConfig::smooth(sigma) };
    cfg.validate().map_err(solve_err)?;
    Ok(cascade_sim::trip_factor(flow, threshold, &cfg))
}

/// Islands over live branches as lists of 1-based bus ids.
#[pyfunction]
#[pyo3(signature = (net, admittances = None, live_threshold = 0.01))]
fn find_islands(net: &PyNetwork, admittances: Option<Vec<f64>>, live_threshold: f64) -> PyResult<Vec<Vec<usize>>> {
    let y = net.admittances(admittances)?;
    Ok(dc_powerflow::find_islands(&net.inner, &y, live_threshold).to_bus_ids())
}

/// DC flow: returns `(theta, flows)`.
#[pyfunction]
#[pyo3(signature = (net, admittances = None, injections = None, live_threshold = 0.01))]
fn solve_flow(
    net: &PyNetwork,
    admittances: Option<Vec<f64>>,
    injections: Option<Vec<f64>>,
    live_threshold: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let y = net.admittances(admittances)?;
    let inj = injections.map(DVector::from_vec).unwrap_or_else(|| net.inner.injections());
    let partition = dc_powerflow::find_islands(&net.inner, &y, live_threshold);
    let sol = dc_powerflow::solve_flow(&net.inner, &y, &inj, &partition).map_err(solve_err)?;
    Ok((sol.theta.iter().copied().collect(), sol.flows.iter().copied().collect()))
}

/// Runs the cascade; `controls[k]` holds the step-k values on `select_bus`.
#[pyfunction]
#[pyo3(signature = (net, select_bus, controls, steps = None, mode = "hard", sigma = 1.0, epsilon = vec![10.0], live_threshold = 0.01))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    net: &PyNetwork,
    select_bus: Vec<usize>,
    controls: Vec<Vec<f64>>,
    steps: Option<usize>,
    mode: &str,
    sigma: f64,
    epsilon: Vec<f64>,
    live_threshold: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let sel = grid_model::selection(&net.inner, &select_bus).map_err(case_err)?;
    let schedule = ControlSchedule::from_selected_values(sel, &controls).map_err(solve_err)?;
    let cfg = TripConfig { sigma, mode: parse_mode(mode)?, live_threshold };
    let m = steps.unwrap_or(schedule.len());
    let report = cascade_sim::simulate(&net.inner, &schedule, m, &cfg, &epsilon_from(epsilon)).map_err(solve_err)?;
    serialize(py, &report)
}

/// Identifies the worst-case schedule on `select_bus`.
#[pyfunction]
#[pyo3(signature = (net, select_bus, epsilon = vec![10.0], steps = 4, sigma = 1.0, delta = 0.01, tol = 1e-9, max_iter = 100, threads = 1))]
#[allow(clippy::too_many_arguments)]
fn identify<'py>(
    py: Python<'py>,
    net: &PyNetwork,
    select_bus: Vec<usize>,
    epsilon: Vec<f64>,
    steps: usize,
    sigma: f64,
    delta: f64,
    tol: f64,
    max_iter: usize,
    threads: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let sel = grid_model::selection(&net.inner, &select_bus).map_err(case_err)?;
    let cfg = IdentificationConfig {
        epsilon: epsilon_from(epsilon),
        steps,
        sigma,
        delta,
        newton_tol: tol,
        newton_max_iter: max_iter,
        threads,
        ..Default::default()
    };
    let sol = py.detach(|| worst_case_id::identify(&net.inner, &sel, &cfg)).map_err(solve_err)?;
    serialize(py, &sol)
}

#[pymodule]
fn gridrisk(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(trip_factor, m)?)?;
    m.add_function(wrap_pyfunction!(find_islands, m)?)?;
    m.add_function(wrap_pyfunction!(solve_flow, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(identify, m)?)?;
    Ok(())
}
