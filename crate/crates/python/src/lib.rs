//! Python bindings. Reports come back as plain dicts and lists (via JSON),
//! instances and specs as opaque classes with `to_json`/`from_json`.

use ::formlab as core;
use core::discrepancy::{discrepancy as discrepancy_at, DiscrepancyParams};
use core::enumeration::{count as count_points, CountRequest, Strategy};
use core::sampling::{sample_instance_at, sample_lattice_at, SamplerConfig};
use core::solver::{find_solution, smallest_radius as least_radius, uniform_supmin as supmin, ApproximationQuery, SupMinQuery};
use core::volume::{error_exponent, main_term_constant, region_mc_volume, sandwich_volume as sandwich, VolumeEstimate};
use core::{build_quadratic_normal_form, validate_spec, Error, NormSpec, QuadraticSignatureSpec, SystemInstance, SystemSpec, TargetBox};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(formlab, FormlabError, PyException);
create_exception!(formlab, BudgetExceeded, FormlabError);

macro_rules! rows {
    ($m:expr) => {{
        let m = $m;
        (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
    }};
}

fn err(e: Error) -> PyErr {
    match e {
        Error::BudgetExceeded { .. } | Error::RejectionBudgetExceeded { .. } => BudgetExceeded::new_err(e.to_string()),
        e if e.is_validation() => PyValueError::new_err(e.to_string()),
        e => FormlabError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| FormlabError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn norm(spec: &SystemSpec, name: &str) -> PyResult<NormSpec> {
    NormSpec::parse(name, spec.d).map_err(err)
}

fn target(intervals: Vec<(f64, f64)>) -> TargetBox {
    TargetBox::closed(intervals)
}

#[pyclass(name = "Spec", module = "formlab", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySpec(SystemSpec);

#[pymethods]
impl PySpec {
    /// Quadratic normal form with signature `(p, q)`, `(u, v)` in dimension `n` with `r` linear forms.
    #[staticmethod]
    fn quadratic(p: usize, q: usize, u: usize, v: usize, n: usize, r: usize) -> PyResult<Self> {
        build_quadratic_normal_form(QuadraticSignatureSpec { p, q, u, v, n, r }).map(Self).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let spec: SystemSpec = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        spec.checked().map(Self).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(|e| FormlabError::new_err(e.to_string()))
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n
    }

    #[getter]
    fn r(&self) -> usize {
        self.0.r
    }

    #[getter]
    fn d(&self) -> u32 {
        self.0.d
    }

    /// `n − r − d`, the growth exponent of the count.
    #[getter]
    fn main_exponent(&self) -> i64 {
        self.0.main_exponent()
    }

    fn validate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &validate_spec(&self.0))
    }

    fn error_exponent<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &error_exponent(&self.0))
    }

    /// Values `(F₀, M₀)(v)` of the normal form.
    fn eval(&self, v: Vec<f64>) -> PyResult<Vec<f64>> {
        core::eval_normal(&self.0, &v).map_err(err)
    }

    fn __repr__(&self) -> String {
        let s = &self.0;
        format!("Spec(n={}, r={}, d={}, p={}, q={})", s.n, s.r, s.d, s.p, s.q)
    }
}

#[pyclass(name = "Instance", module = "formlab", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyInstance(SystemInstance);

#[pymethods]
impl PyInstance {
    #[new]
    fn new(spec: &PySpec, lam: f64, g1: Vec<Vec<f64>>, g2: Vec<Vec<f64>>) -> PyResult<Self> {
        SystemInstance::new(spec.0.clone(), lam, &g1, &g2).map(Self).map_err(err)
    }

    #[staticmethod]
    fn identity(spec: &PySpec) -> PyResult<Self> {
        SystemInstance::identity(spec.0.clone()).map(Self).map_err(err)
    }

    /// The `index`-th instance drawn from the seeded sampler.
    #[staticmethod]
    #[pyo3(signature = (spec, seed, index = 0))]
    fn sample(spec: &PySpec, seed: u64, index: u64) -> PyResult<Self> {
        sample_instance_at(&spec.0, &SamplerConfig::with_seed(seed), index).map(Self).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(Self).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(|e| FormlabError::new_err(e.to_string()))
    }

    #[getter]
    fn spec(&self) -> PySpec {
        PySpec(self.0.spec().clone())
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.0.lambda()
    }

    #[getter]
    fn g1(&self) -> Vec<Vec<f64>> {
        rows!(self.0.g1())
    }

    #[getter]
    fn g2(&self) -> Vec<Vec<f64>> {
        rows!(self.0.g2())
    }

    /// Values `(F, M)(v)`.
    fn eval(&self, v: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.eval(&v).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Instance(n={}, r={}, lam={})", self.0.n(), self.0.r(), self.0.lambda())
    }
}

/// Number of integer `v` with `‖v‖ ≤ t` and `(F, M)(v)` in the box.
#[pyfunction]
#[pyo3(signature = (instance, intervals, t, norm = "sup", strategy = "pruned", budget = None))]
fn count<'py>(
    py: Python<'py>,
    instance: &PyInstance,
    intervals: Vec<(f64, f64)>,
    t: f64,
    norm: &str,
    strategy: &str,
    budget: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let inst = &instance.0;
    let strategy: Strategy = strategy.parse().map_err(err)?;
    let mut req = CountRequest::new(inst.clone(), target(intervals), t).norm(self::norm(inst.spec(), norm)?).strategy(strategy);
    if let Some(b) = budget {
        req = req.budget(b);
    }
    let report = py.detach(|| count_points(&req)).map_err(err)?;
    to_py(py, &report)
}

fn estimate<'py>(py: Python<'py>, est: &VolumeEstimate) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, est)
}

/// The main-term constant `c_{F,M}`.
#[pyfunction]
#[pyo3(signature = (instance, samples, seed, norm = "sup"))]
fn constant<'py>(py: Python<'py>, instance: &PyInstance, samples: u64, seed: u64, norm: &str) -> PyResult<Bound<'py, PyAny>> {
    let inst = &instance.0;
    let norm = self::norm(inst.spec(), norm)?;
    let est = py.detach(|| main_term_constant(inst, norm, samples, seed)).map_err(err)?;
    estimate(py, &est)
}

/// Monte Carlo volume of `{‖v‖ ≤ t, (F, M)(v) ∈ I}`.
#[pyfunction]
#[pyo3(signature = (instance, intervals, t, samples, seed, norm = "sup"))]
fn volume<'py>(
    py: Python<'py>,
    instance: &PyInstance,
    intervals: Vec<(f64, f64)>,
    t: f64,
    samples: u64,
    seed: u64,
    norm: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let inst = &instance.0;
    let norm = self::norm(inst.spec(), norm)?;
    let target = target(intervals);
    let est = py.detach(|| region_mc_volume(inst, &target, t, norm, samples, seed)).map_err(err)?;
    estimate(py, &est)
}

/// Smoothed lower and upper volumes around the sharp one.
#[pyfunction]
#[pyo3(signature = (instance, intervals, t, delta, samples, seed, norm = "sup"))]
#[allow(clippy::too_many_arguments)]
fn sandwich_volume<'py>(
    py: Python<'py>,
    instance: &PyInstance,
    intervals: Vec<(f64, f64)>,
    t: f64,
    delta: f64,
    samples: u64,
    seed: u64,
    norm: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let inst = &instance.0;
    let norm = self::norm(inst.spec(), norm)?;
    let target = target(intervals);
    let s = py.detach(|| sandwich(inst, &target, t, delta, norm, samples, seed)).map_err(err)?;
    to_py(py, &s)
}

/// `|#(ℤⁿg ∩ A) − vol(A)|` for the lattice with basis `g` (rows).
#[pyfunction]
#[pyo3(signature = (spec, basis, intervals, t, samples, seed, norm = "sup"))]
#[allow(clippy::too_many_arguments)]
fn discrepancy<'py>(
    py: Python<'py>,
    spec: &PySpec,
    basis: Vec<Vec<f64>>,
    intervals: Vec<(f64, f64)>,
    t: f64,
    samples: u64,
    seed: u64,
    norm: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let spec = &spec.0;
    let params = DiscrepancyParams { norm: self::norm(spec, norm)?, volume_samples: samples, seed, ..Default::default() };
    let g = SystemInstance::new(spec.clone(), 1.0, &basis, &identity_rows(spec.r)).map_err(err)?.g1().clone();
    let target = target(intervals);
    let rep = py.detach(|| discrepancy_at(&g, spec, &target, t, &params)).map_err(err)?;
    to_py(py, &rep)
}

fn identity_rows(r: usize) -> Vec<Vec<f64>> {
    (0..r).map(|i| (0..r).map(|j| (i == j) as u8 as f64).collect()).collect()
}

/// Basis (rows) of the `index`-th sampled unimodular lattice.
#[pyfunction]
#[pyo3(signature = (n, seed, index = 0))]
fn sample_lattice(n: usize, seed: u64, index: u64) -> PyResult<Vec<Vec<f64>>> {
    let lattice = sample_lattice_at(&SamplerConfig::with_seed(seed), n, index).map_err(err)?;
    Ok(rows!(lattice.basis()))
}

/// A witness `v` with `|(F, M)(v) − ξ| < ε` and `‖v‖ ≤ t`, or `None`.
#[pyfunction]
#[pyo3(signature = (instance, xi, eps, t, norm = "sup"))]
fn solve<'py>(py: Python<'py>, instance: &PyInstance, xi: Vec<f64>, eps: Vec<f64>, t: f64, norm: &str) -> PyResult<Bound<'py, PyAny>> {
    let inst = &instance.0;
    let mut q = ApproximationQuery::new(inst.clone(), xi, eps, t).map_err(err)?;
    q.norm = self::norm(inst.spec(), norm)?;
    let w = py.detach(|| find_solution(&q)).map_err(err)?;
    to_py(py, &w)
}

/// Least integer radius with a solution, up to `t_max`.
#[pyfunction]
#[pyo3(signature = (instance, xi, eps, t_max, norm = "sup"))]
fn smallest_radius<'py>(
    py: Python<'py>,
    instance: &PyInstance,
    xi: Vec<f64>,
    eps: Vec<f64>,
    t_max: u64,
    norm: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let inst = &instance.0;
    ApproximationQuery::new(inst.clone(), xi.clone(), eps.clone(), 1.0).map_err(err)?;
    let norm = self::norm(inst.spec(), norm)?;
    let rep = py.detach(|| least_radius(inst, &xi, &eps, t_max, norm, core::enumeration::DEFAULT_BUDGET)).map_err(err)?;
    to_py(py, &rep)
}

/// `max` over grid targets `‖ξ‖∞ ≤ n_radius` of the distance to the nearest value.
#[pyfunction]
#[pyo3(signature = (instance, n_radius, t, grid_step))]
fn uniform_supmin<'py>(py: Python<'py>, instance: &PyInstance, n_radius: f64, t: f64, grid_step: f64) -> PyResult<Bound<'py, PyAny>> {
    let q = SupMinQuery::new(instance.0.clone(), n_radius, t, grid_step).map_err(err)?;
    let rep = py.detach(|| supmin(&q)).map_err(err)?;
    to_py(py, &rep)
}

#[pymodule(name = "formlab")]
fn formlab_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySpec>()?;
    m.add_class::<PyInstance>()?;
    m.add("FormlabError", m.py().get_type::<FormlabError>())?;
    m.add("BudgetExceeded", m.py().get_type::<BudgetExceeded>())?;
    m.add_function(wrap_pyfunction!(count, m)?)?;
    m.add_function(wrap_pyfunction!(constant, m)?)?;
    m.add_function(wrap_pyfunction!(volume, m)?)?;
    m.add_function(wrap_pyfunction!(sandwich_volume, m)?)?;
    m.add_function(wrap_pyfunction!(discrepancy, m)?)?;
    m.add_function(wrap_pyfunction!(sample_lattice, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(smallest_radius, m)?)?;
    m.add_function(wrap_pyfunction!(uniform_supmin, m)?)?;
    Ok(())
}
