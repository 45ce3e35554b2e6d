//! Python bindings: activations, adapters, spectral helpers and a JSON entry
//! point for whole training runs.

use loran_core::config::ExperimentConfig;
use loran_core::gradcheck::{run_gradcheck, GradcheckScope};
use loran_core::harness::execute_run;
use loran_core::{spectrum, svd, Tensor, WeightUpdate};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_tensor(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    Tensor::from_rows(&refs).map_err(value_err)
}

fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

#[pyclass(name = "Activation", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyActivation {
    inner: loran_core::Activation,
}

#[pymethods]
impl PyActivation {
    /// Parses forms such as `"tanh"`, `"swish:25"` or `"sinter:5e-5:1e4"`.
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        let inner: loran_core::Activation = text.parse().map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn sinter(amplitude: f64, omega: f64) -> PyResult<Self> {
        let inner = loran_core::Activation::Sinter { amplitude, omega };
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    fn eval(&self, x: f64) -> f64 {
        self.inner.eval(x)
    }

    fn deriv(&self, x: f64) -> f64 {
        self.inner.deriv(x)
    }

    fn is_zero_fixing(&self) -> bool {
        self.inner.is_zero_fixing()
    }

    fn __repr__(&self) -> String {
        format!("Activation('{}')", self.inner)
    }
}

#[pyclass(name = "LoraAdapter", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyLoraAdapter {
    inner: loran_core::LoraAdapter,
}

#[pymethods]
impl PyLoraAdapter {
    /// Fresh adapter: `B = 0`, `A ~ N(0, 1/rank)` from `seed`.
    #[new]
    #[pyo3(signature = (d, k, rank, alpha, seed=0))]
    fn new(d: usize, k: usize, rank: usize, alpha: f64, seed: u64) -> PyResult<Self> {
        let inner = loran_core::LoraAdapter::init(d, k, rank, alpha, seed).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_factors(b: Vec<Vec<f64>>, a: Vec<Vec<f64>>, alpha: f64) -> PyResult<Self> {
        let inner = loran_core::LoraAdapter::from_factors(to_tensor(b)?, to_tensor(a)?, alpha)
            .map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    #[getter]
    fn scale(&self) -> f64 {
        self.inner.scale()
    }

    #[getter]
    fn b(&self) -> Vec<Vec<f64>> {
        to_rows(self.inner.b())
    }

    #[getter]
    fn a(&self) -> Vec<Vec<f64>> {
        to_rows(self.inner.a())
    }

    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    fn delta_weight(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&self.inner.delta_weight().map_err(value_err)?))
    }
}

#[pyclass(name = "LoranAdapter", frozen)]
pub struct PyLoranAdapter {
    inner: loran_core::LoranAdapter,
}

#[pymethods]
impl PyLoranAdapter {
    #[new]
    #[pyo3(signature = (lora, activation, scale_inside=true))]
    fn new(lora: PyLoraAdapter, activation: PyActivation, scale_inside: bool) -> PyResult<Self> {
        let inner = loran_core::LoranAdapter::new(lora.inner, activation.inner, scale_inside)
            .map_err(value_err)?;
        Ok(Self { inner })
    }

    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    fn delta_weight(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&self.inner.delta_weight().map_err(value_err)?))
    }
}

#[pyfunction]
fn svd_values(matrix: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    svd::svd_values(&to_tensor(matrix)?).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (values, rel_tol=1e-10))]
fn numerical_rank(values: Vec<f64>, rel_tol: f64) -> usize {
    spectrum::numerical_rank(&values, rel_tol)
}

#[pyfunction]
fn effective_rank(values: Vec<f64>) -> PyResult<f64> {
    spectrum::effective_rank(&values).map_err(value_err)
}

/// The default experiment configuration as JSON.
#[pyfunction]
fn default_config() -> String {
    ExperimentConfig::default().to_json_pretty()
}

/// Trains the run described by `config_json` with `seed`; returns the run
/// report as JSON.
#[pyfunction]
#[pyo3(signature = (config_json, seed=0))]
fn run(py: Python<'_>, config_json: &str, seed: u64) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(value_err)?;
    cfg.validate().map_err(value_err)?;
    let run = cfg.run_config().with_seed(seed);
    let result = py
        .detach(|| execute_run(&run, false))
        .map_err(value_err)?;
    Ok(result.report.to_json_pretty())
}

/// Runs the finite-difference suite; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (scope="all"))]
fn gradcheck(scope: &str) -> PyResult<String> {
    let scope: GradcheckScope =
        serde_json::from_value(serde_json::Value::String(scope.into())).map_err(value_err)?;
    let report = run_gradcheck(scope, false).map_err(value_err)?;
    serde_json::to_string(&report).map_err(value_err)
}

#[pymodule]
fn loran(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyActivation>()?;
    m.add_class::<PyLoraAdapter>()?;
    m.add_class::<PyLoranAdapter>()?;
    m.add_function(wrap_pyfunction!(svd_values, m)?)?;
    m.add_function(wrap_pyfunction!(numerical_rank, m)?)?;
    m.add_function(wrap_pyfunction!(effective_rank, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
