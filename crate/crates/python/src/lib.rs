//! Python module `pyplab`: closed-form functions, model parsing, exact
//! counting on sampled instances, and the main experiment drivers.

use std::path::Path;

use perceptron_lab as lab;
use perceptron_lab::cli::Command;
use perceptron_lab::experiments::Model;
use perceptron_lab::{Enumerator, LabError, SeededStream};
use pyo3::exceptions::{PyOverflowError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: LabError) -> PyErr {
    match e {
        LabError::CapExceeded { .. } => PyOverflowError::new_err(e.to_string()),
        LabError::Domain(_)
        | LabError::InvalidSpec(_)
        | LabError::InvalidActivation(_)
        | LabError::Shape(_)
        | LabError::Config(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

trait IntoPyResult<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPyResult<T> for lab::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

#[pyfunction]
fn k2(t: f64) -> PyResult<f64> {
    lab::formulas::k2(t).py()
}

#[pyfunction]
fn psi2(eps: f64) -> PyResult<f64> {
    lab::formulas::psi2(eps).py()
}

#[pyfunction]
fn rel_entropy(a: f64, p: f64) -> PyResult<f64> {
    lab::formulas::rel_entropy(a, p).py()
}

#[pyfunction]
fn truncated_log(log_z: f64, n: usize, delta: f64) -> f64 {
    lab::formulas::truncated_log(log_z, n, delta)
}

#[pyfunction]
fn sudakov_lower(eps: f64, n: usize) -> PyResult<f64> {
    lab::formulas::sudakov_lower(eps, n).py()
}

/// `(threshold, probability_bound)`
#[pyfunction]
fn all_fail_bound(eps: f64, n: usize) -> PyResult<(f64, f64)> {
    let b = lab::formulas::all_fail_bound(eps, n).py()?;
    Ok((b.threshold, b.probability_bound))
}

/// `(gap, lower)`
#[pyfunction]
fn log_delta_gap(x: f64, y: f64, gamma: f64) -> PyResult<(f64, f64)> {
    let g = lab::formulas::log_delta_gap(x, y, gamma).py()?;
    Ok((g.gap, g.lower))
}

#[pyfunction]
fn first_moment_alpha(activation: &Activation) -> PyResult<f64> {
    lab::experiments::first_moment_alpha(&activation.0).py()
}

/// Activation parsed from strings like `"half_space:0"` or `"interval:-1,1"`.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Activation(lab::Activation);

#[pymethods]
impl Activation {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        spec.parse().map(Activation).py()
    }

    fn eval(&self, x: f64) -> bool {
        self.0.eval(x)
    }

    fn gaussian_mass(&self) -> f64 {
        self.0.gaussian_mass().p
    }

    fn is_symmetric(&self) -> bool {
        self.0.is_symmetric()
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Activation('{}')", self.0)
    }
}

/// Disorder law parsed from strings like `"gaussian"` or `"exponential_power:4"`.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct DisorderSpec(lab::DisorderSpec);

#[pymethods]
impl DisorderSpec {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        spec.parse().map(DisorderSpec).py()
    }

    fn variance_proxy(&self) -> PyResult<f64> {
        self.0.variance_proxy().py()
    }

    fn is_lattice(&self) -> bool {
        self.0.is_lattice()
    }

    /// Row `row` of the disorder stream for `seed`.
    #[pyo3(signature = (n, seed, row=0))]
    fn sample_row(&self, n: usize, seed: u64, row: usize) -> Vec<f64> {
        self.0.sample_row(row, n, SeededStream::new(seed))
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("DisorderSpec('{}')", self.0)
    }
}

/// One disorder realization with its activation.
#[pyclass(frozen)]
struct Instance(lab::Instance);

#[pymethods]
impl Instance {
    #[staticmethod]
    #[pyo3(signature = (activation, disorder, n, m, seed, replicate=0))]
    fn sample(
        activation: &Activation,
        disorder: &DisorderSpec,
        n: usize,
        m: usize,
        seed: u64,
        replicate: u64,
    ) -> PyResult<Self> {
        let stream = SeededStream::new(seed).with_replicate(replicate);
        lab::Instance::sample(&disorder.0, activation.0.clone(), n, m, stream)
            .map(Instance)
            .py()
    }

    /// Instance from explicit rows (`m` lists of `n` reals).
    #[staticmethod]
    fn from_rows(activation: &Activation, rows: Vec<Vec<f64>>, n: usize) -> PyResult<Self> {
        let xi = lab::DisorderMatrix::from_rows(n, &rows).py()?;
        lab::Instance::new(activation.0.clone(), xi).map(Instance).py()
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.0.m()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.0.m()).map(|r| self.0.xi().row(r)).collect()
    }

    /// Exact solution count `Z`.
    fn count(&self, py: Python<'_>) -> PyResult<u64> {
        py.detach(|| Enumerator::default().count_exact(&self.0, 0.05))
            .py()
            .map(|r| r.z)
    }

    /// `Z` by direct per-configuration evaluation (n <= 16).
    fn count_naive(&self) -> PyResult<u64> {
        lab::partition::count_naive(&self.0, 0.05).py().map(|r| r.z)
    }

    #[pyo3(signature = (delta=0.05))]
    fn log_trunc(&self, py: Python<'_>, delta: f64) -> PyResult<f64> {
        py.detach(|| Enumerator::default().count_exact(&self.0, delta))
            .py()
            .map(|r| r.log_trunc)
    }

    fn exists_solution(&self, py: Python<'_>) -> PyResult<bool> {
        py.detach(|| Enumerator::default().exists_solution(&self.0)).py()
    }

    fn free_energy_soft(&self, py: Python<'_>, a_trunc: f64) -> PyResult<f64> {
        py.detach(|| Enumerator::default().free_energy_soft(&self.0, a_trunc))
            .py()
    }

    fn add_one_ratio(&self, py: Python<'_>, row: Vec<f64>) -> PyResult<f64> {
        py.detach(|| Enumerator::default().add_one_ratio(&self.0, &row)).py()
    }

    fn violation_histogram(&self, py: Python<'_>) -> PyResult<Vec<u64>> {
        py.detach(|| Enumerator::default().violation_histogram(&self.0)).py()
    }

    /// Every solution as a list of +-1 spins.
    fn solutions(&self, py: Python<'_>) -> PyResult<Vec<Vec<i8>>> {
        let n = self.0.n();
        let sols = py.detach(|| Enumerator::default().solutions(&self.0)).py()?;
        Ok(sols.into_iter().map(|c| c.to_spins(n)).collect())
    }
}

#[pyfunction]
#[pyo3(signature = (activation, disorder, n, alpha_grid, replicates, seed))]
fn threshold_scan<'py>(
    py: Python<'py>,
    activation: &Activation,
    disorder: &DisorderSpec,
    n: usize,
    alpha_grid: Vec<f64>,
    replicates: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let model = Model::new(activation.0.clone(), disorder.0.clone());
    let c = py
        .detach(|| {
            lab::experiments::threshold_scan(
                &model,
                n,
                &alpha_grid,
                replicates,
                SeededStream::new(seed),
                &Enumerator::default(),
            )
        })
        .py()?;
    let d = PyDict::new(py);
    d.set_item("n", c.n)?;
    d.set_item("alpha_grid", c.alpha_grid)?;
    d.set_item("m_values", c.m_values)?;
    d.set_item("p_solvable", c.p_solvable)?;
    d.set_item("ci", c.ci)?;
    d.set_item("alpha_hat", c.alpha_hat)?;
    d.set_item("alpha_hat_ci", c.alpha_hat_ci)?;
    d.set_item("width_10_90", c.width_10_90)?;
    d.set_item("width_ci", c.width_ci)?;
    Ok(d)
}

#[pyfunction]
fn all_fail_frequency<'py>(
    py: Python<'py>,
    eps: f64,
    n_process: usize,
    replicates: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let e = py
        .detach(|| lab::verify::all_fail_frequency(eps, n_process, replicates, SeededStream::new(seed)))
        .py()?;
    let d = PyDict::new(py);
    d.set_item("p_hat", e.p_hat)?;
    d.set_item("se", e.se)?;
    d.set_item("ci", e.ci)?;
    d.set_item("threshold", e.threshold)?;
    d.set_item("bound", e.bound)?;
    Ok(d)
}

#[pyfunction]
fn clt_gap<'py>(
    py: Python<'py>,
    activation: &Activation,
    p: usize,
    n: usize,
    disorder: &DisorderSpec,
    replicates: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let g = py
        .detach(|| lab::verify::clt_gap(&activation.0, p, n, &disorder.0, replicates, SeededStream::new(seed)))
        .py()?;
    let d = PyDict::new(py);
    d.set_item("value", g.value)?;
    d.set_item("signed", g.signed)?;
    d.set_item("se", g.se)?;
    Ok(d)
}

fn command_named(name: &str) -> PyResult<Command> {
    Ok(match name {
        "enumerate" => Command::Enumerate,
        "separation" => Command::Separation,
        "verify addone" | "verify_addone" => Command::VerifyAddone,
        "verify allfail" | "verify_allfail" => Command::VerifyAllfail,
        "verify sup" | "verify_sup" => Command::VerifySup,
        "verify clt" | "verify_clt" => Command::VerifyClt,
        "threshold" => Command::Threshold,
        "concentration" => Command::Concentration,
        "universality" => Command::Universality,
        "slowdec" => Command::Slowdec,
        "tempgap" => Command::Tempgap,
        other => return Err(PyValueError::new_err(format!("unknown command `{other}`"))),
    })
}

/// Runs a TOML config like the `plab` binary; returns the results CSV text.
#[pyfunction]
fn run(py: Python<'_>, command: &str, config: &str, out_dir: &str) -> PyResult<String> {
    let cfg = lab::cli::parse_config(command_named(command)?, config).py()?;
    let dir = Path::new(out_dir);
    py.detach(|| lab::cli::run(&cfg, dir)).py()?;
    std::fs::read_to_string(dir.join("results.csv")).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
pub fn pyplab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Activation>()?;
    m.add_class::<DisorderSpec>()?;
    m.add_class::<Instance>()?;
    m.add_function(wrap_pyfunction!(k2, m)?)?;
    m.add_function(wrap_pyfunction!(psi2, m)?)?;
    m.add_function(wrap_pyfunction!(rel_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(truncated_log, m)?)?;
    m.add_function(wrap_pyfunction!(sudakov_lower, m)?)?;
    m.add_function(wrap_pyfunction!(all_fail_bound, m)?)?;
    m.add_function(wrap_pyfunction!(log_delta_gap, m)?)?;
    m.add_function(wrap_pyfunction!(first_moment_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_scan, m)?)?;
    m.add_function(wrap_pyfunction!(all_fail_frequency, m)?)?;
    m.add_function(wrap_pyfunction!(clt_gap, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
