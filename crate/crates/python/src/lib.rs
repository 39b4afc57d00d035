//! Python bindings: plant model, linearisation, synthesis and simulation.
//!
//! Matrices cross the boundary as lists of rows; complex eigenvalues as
//! Python `complex`.

use ndarray::Array2;
use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use filmctl::sim::{RunConfig as CoreRunConfig, TrajectoryRecord as CoreRecord};
use filmctl::{matreq, Config, Error};

fn err(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter { .. }
        | Error::Dimension { .. }
        | Error::Config { .. }
        | Error::MissingKey(_)
        | Error::Format { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_array(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Array2::from_shape_vec((r, c), rows.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

#[pyclass(module = "pyfilmctl", from_py_object)]
#[derive(Clone)]
struct PhysicalParams {
    inner: filmctl::PhysicalParams,
}

#[pymethods]
impl PhysicalParams {
    /// Defaults to the reference film: Ca = 0.05, θ = π/3, L = 30, β = 0.5.
    #[new]
    #[pyo3(signature = (reynolds, capillary=0.05, theta=std::f64::consts::FRAC_PI_3, length=30.0, beta=0.5))]
    fn new(reynolds: f64, capillary: f64, theta: f64, length: f64, beta: f64) -> PyResult<Self> {
        Ok(Self {
            inner: filmctl::PhysicalParams::new(reynolds, capillary, theta, length, beta).map_err(err)?,
        })
    }

    #[getter]
    fn reynolds(&self) -> f64 {
        self.inner.reynolds
    }
    #[getter]
    fn capillary(&self) -> f64 {
        self.inner.capillary
    }
    #[getter]
    fn theta(&self) -> f64 {
        self.inner.theta
    }
    #[getter]
    fn length(&self) -> f64 {
        self.inner.length
    }
    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!(
            "PhysicalParams(reynolds={}, capillary={}, theta={}, length={}, beta={})",
            p.reynolds, p.capillary, p.theta, p.length, p.beta
        )
    }
}

/// Right-hand side `(h_t, q_t)` of the film model on a uniform periodic grid.
#[pyfunction]
#[pyo3(signature = (params, h, q, f=None))]
fn wr_rhs(params: &PhysicalParams, h: Vec<f64>, q: Vec<f64>, f: Option<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let grid = filmctl::Grid::new(h.len(), params.inner.length).map_err(err)?;
    let model = filmctl::WrModel::new(params.inner, grid).map_err(err)?;
    let f = f.unwrap_or_else(|| vec![0.0; h.len()]);
    model.rhs(&h, &q, &f).map_err(err)
}

#[pyclass(module = "pyfilmctl", from_py_object)]
#[derive(Clone)]
struct LinearSystem {
    inner: filmctl::LinearSystem,
}

#[pymethods]
impl LinearSystem {
    #[getter]
    fn a(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.a)
    }
    #[getter]
    fn b(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.b)
    }
    #[getter]
    fn c(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.c)
    }
    #[getter]
    fn u(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.u)
    }
    #[getter]
    fn v(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.v)
    }
    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes()
    }

    /// All `2N` open-loop eigenvalues.
    fn eigenvalues(&self) -> Vec<Complex64> {
        self.inner.eigenvalues()
    }

    fn unstable_dimension(&self) -> usize {
        self.inner.unstable_dimension()
    }
}

/// Linearises the film about `h = 1` with `m` actuators and `p` observers.
#[pyfunction]
#[pyo3(signature = (params, n_nodes=128, m=5, p=5, omega=0.1))]
fn linearize(params: &PhysicalParams, n_nodes: usize, m: usize, p: usize, omega: f64) -> PyResult<LinearSystem> {
    let grid = filmctl::Grid::new(n_nodes, params.inner.length).map_err(err)?;
    let act = filmctl::ActuatorBank::new(m, omega, params.inner.length).map_err(err)?;
    let obs = filmctl::ObserverBank::new(p, &grid).map_err(err)?;
    Ok(LinearSystem {
        inner: filmctl::linearize(&params.inner, &grid, &act, &obs).map_err(err)?,
    })
}

#[pyclass(module = "pyfilmctl", from_py_object)]
#[derive(Clone)]
struct Controller {
    inner: filmctl::Controller,
}

#[pymethods]
impl Controller {
    #[getter]
    fn strategy(&self) -> &'static str {
        self.inner.strategy().name()
    }

    #[getter]
    fn closed_loop_abscissa(&self) -> f64 {
        self.inner.info.closed_loop_abscissa
    }

    /// Synthesis diagnostics as a JSON string.
    fn info_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.info).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: filmctl::Controller::from_json(text).map_err(err)?,
        })
    }

    /// Eigenvalues of the closed loop on the design space of `system`.
    fn closed_loop_eigenvalues(&self, system: &LinearSystem) -> PyResult<Vec<Complex64>> {
        matreq::eigenvalues(&self.inner.closed_loop_matrix(&system.inner)).map_err(err)
    }
}

/// `strategy` is one of `full-state`, `sof`, `luenberger`.
#[pyfunction]
fn synthesize(py: Python<'_>, system: &LinearSystem, strategy: &str) -> PyResult<Controller> {
    let strategy: filmctl::Strategy = strategy.parse().map_err(err)?;
    let sys = system.inner.clone();
    let inner = py
        .detach(move || filmctl::synthesize(&sys, strategy, &Default::default()))
        .map_err(err)?;
    Ok(Controller { inner })
}

#[pyfunction]
fn solve_lyapunov(a: Vec<Vec<f64>>, w: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(to_rows(&matreq::solve_lyapunov(&to_array(a)?, &to_array(w)?).map_err(err)?))
}

#[pyfunction]
fn solve_care(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, u: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let q = matreq::solve_care(&to_array(a)?, &to_array(b)?, &to_array(u)?, &to_array(v)?).map_err(err)?;
    Ok(to_rows(&q))
}

#[pyfunction]
fn lqr_gain(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, u: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let k = matreq::lqr_gain(&to_array(a)?, &to_array(b)?, &to_array(u)?, &to_array(v)?).map_err(err)?;
    Ok(to_rows(&k))
}

/// Optimal static output feedback, started from `k0` if given.
#[pyfunction]
#[pyo3(signature = (a, b, c, u, v, k0=None))]
fn solve_sof(
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    k0: Option<Vec<Vec<f64>>>,
) -> PyResult<Vec<Vec<f64>>> {
    let k0 = k0.map(to_array).transpose()?;
    let sol = matreq::solve_sof(
        &to_array(a)?,
        &to_array(b)?,
        &to_array(c)?,
        &to_array(u)?,
        &to_array(v)?,
        k0.as_ref(),
        &Default::default(),
    )
    .map_err(err)?;
    Ok(to_rows(&sol.k))
}

#[pyclass(module = "pyfilmctl", from_py_object)]
#[derive(Clone)]
struct RunConfig {
    inner: CoreRunConfig,
}

#[pymethods]
impl RunConfig {
    /// Defaults are the reference protocol: N = 128, M = P = 5, SOF, 300
    /// time units of burn-in and 100 of control.
    #[new]
    #[pyo3(signature = (params, strategy=Some("sof".to_string()), n_nodes=128, m=5, p=5, seed=0))]
    fn new(params: &PhysicalParams, strategy: Option<String>, n_nodes: usize, m: usize, p: usize, seed: u64) -> PyResult<Self> {
        let mut c = CoreRunConfig::new(params.inner);
        c.strategy = match strategy.as_deref() {
            None | Some("none") => None,
            Some(s) => Some(s.parse().map_err(err)?),
        };
        c.n_nodes = n_nodes;
        c.n_actuators = m;
        c.n_observers = p;
        c.seed = seed;
        c.validate().map_err(err)?;
        Ok(Self { inner: c })
    }

    /// Reads the sectioned `key = value` format used by the command line.
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        let cfg = Config::parse(text, "<string>").map_err(err)?;
        Ok(Self {
            inner: cfg.run_config().map_err(err)?,
        })
    }

    #[getter]
    fn burn_in_time(&self) -> f64 {
        self.inner.burn_in_time
    }
    #[setter]
    fn set_burn_in_time(&mut self, v: f64) {
        self.inner.burn_in_time = v;
    }
    #[getter]
    fn control_time(&self) -> f64 {
        self.inner.control_time
    }
    #[setter]
    fn set_control_time(&mut self, v: f64) {
        self.inner.control_time = v;
    }
    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon
    }

    fn linear_system(&self) -> PyResult<LinearSystem> {
        Ok(LinearSystem {
            inner: self.inner.linear_system().map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

#[pyclass(module = "pyfilmctl", skip_from_py_object)]
struct TrajectoryRecord {
    inner: CoreRecord,
}

#[pymethods]
impl TrajectoryRecord {
    #[getter]
    fn verdict(&self) -> &'static str {
        self.inner.verdict.name()
    }
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }
    #[getter]
    fn norms(&self) -> Vec<f64> {
        self.inner.norms.clone()
    }
    #[getter]
    fn costs(&self) -> Vec<f64> {
        self.inner.costs.clone()
    }
    #[getter]
    fn amplitudes(&self) -> Vec<Vec<f64>> {
        self.inner.amplitudes.clone()
    }
    #[getter]
    fn estimator_errors(&self) -> Option<Vec<f64>> {
        self.inner.estimator_errors.clone()
    }
    #[getter]
    fn final_norm(&self) -> f64 {
        self.inner.final_norm
    }
    #[getter]
    fn final_cost(&self) -> f64 {
        self.inner.final_cost
    }
    #[getter]
    fn decay_rate(&self) -> Option<f64> {
        self.inner.decay.map(|d| d.rate)
    }
    #[getter]
    fn linear_rate(&self) -> Option<f64> {
        self.inner.linear_rate
    }
    #[getter]
    fn mass_defect(&self) -> f64 {
        self.inner.mass_defect
    }
    #[getter]
    fn message(&self) -> Option<String> {
        self.inner.message.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "TrajectoryRecord(verdict={}, final_norm={:e}, samples={})",
            self.inner.verdict,
            self.inner.final_norm,
            self.inner.times.len()
        )
    }
}

/// Full protocol: burn-in, switch-on at t = 0, classification.
#[pyfunction]
fn run(py: Python<'_>, config: &RunConfig) -> PyResult<TrajectoryRecord> {
    let cfg = config.inner.clone();
    let out = py.detach(move || filmctl::run(&cfg)).map_err(err)?;
    Ok(TrajectoryRecord { inner: out.record })
}

#[pymodule]
fn pyfilmctl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PhysicalParams>()?;
    m.add_class::<LinearSystem>()?;
    m.add_class::<Controller>()?;
    m.add_class::<RunConfig>()?;
    m.add_class::<TrajectoryRecord>()?;
    m.add_function(wrap_pyfunction!(wr_rhs, m)?)?;
    m.add_function(wrap_pyfunction!(linearize, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(solve_lyapunov, m)?)?;
    m.add_function(wrap_pyfunction!(solve_care, m)?)?;
    m.add_function(wrap_pyfunction!(lqr_gain, m)?)?;
    m.add_function(wrap_pyfunction!(solve_sof, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
