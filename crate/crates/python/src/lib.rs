//! Python bindings: calibration, the calibrated gradient-norm estimator,
//! baselines, NPY I/O and the synthetic benchmark.
//!
//! Matrices cross the boundary as lists of rows (any nested sequence,
//! including a 2-D NumPy array, is accepted on input).

use std::collections::BTreeMap;

use pyo3::create_exception;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

use sfpp::baselines::{self, BaselineConfig, Method};
use sfpp::bench::{self, BenchMethod, SuiteConfig};
use sfpp::calibrator::{posteriors_for, CalibratorConfig, GaussianModel, PosteriorMode};
use sfpp::estimator::{self, EstimatorConfig};
use sfpp::ingest::{self, ArrayData};
use sfpp::{DatasetBundle, Error, ErrorCategory, Matrix, NdArray};

create_exception!(pysfpp, InputError, PyValueError);
create_exception!(pysfpp, NumericalError, PyArithmeticError);
create_exception!(pysfpp, MissingValidationError, PyValueError);

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.category() {
        ErrorCategory::Input => InputError::new_err(msg),
        ErrorCategory::Numerical => NumericalError::new_err(msg),
        ErrorCategory::MissingValidation => MissingValidationError::new_err(msg),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(to_py)
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

fn calibrator_config(mode: &str, cov_jitter: f64, normalize_threshold: usize) -> PyResult<CalibratorConfig> {
    if !(cov_jitter >= 0.0 && cov_jitter.is_finite()) {
        return Err(InputError::new_err(format!("cov_jitter must be finite and non-negative, got {cov_jitter}")));
    }
    Ok(CalibratorConfig {
        mode: mode.parse().map_err(to_py)?,
        cov_jitter,
        normalize_threshold,
    })
}

/// Result of one estimator run.
#[pyclass(name = "EstimateReport", frozen)]
struct PyReport {
    inner: sfpp::EstimateReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn method(&self) -> &str {
        &self.inner.method
    }

    #[getter]
    fn predicted_accuracy(&self) -> f64 {
        self.inner.predicted_accuracy
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.inner.n_samples
    }

    #[getter]
    fn per_sample_correct(&self) -> Option<Vec<bool>> {
        self.inner.per_sample_correct.clone()
    }

    /// `(pseudo-label norm, uniform-target norm)` for each sample.
    #[getter]
    fn grad_norm_pairs(&self) -> Option<Vec<(f64, f64)>> {
        self.inner.grad_norm_pairs.clone()
    }

    #[getter]
    fn config(&self) -> BTreeMap<String, String> {
        self.inner.config_echo.clone()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn write(&self, path: &str) -> PyResult<()> {
        ingest::write_report(&self.inner, path).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "EstimateReport(method={:?}, predicted_accuracy={}, n_samples={})",
            self.inner.method, self.inner.predicted_accuracy, self.inner.n_samples
        )
    }
}

/// Class-conditional Gaussian model fitted to target logits.
#[pyclass(name = "GaussianCalibrator", frozen)]
struct PyCalibrator {
    model: GaussianModel,
    mode: PosteriorMode,
}

#[pymethods]
impl PyCalibrator {
    #[staticmethod]
    #[pyo3(signature = (logits, mode = "bayes", cov_jitter = 1e-6, normalize_threshold = 32))]
    fn fit(logits: Vec<Vec<f64>>, mode: &str, cov_jitter: f64, normalize_threshold: usize) -> PyResult<Self> {
        let config = calibrator_config(mode, cov_jitter, normalize_threshold)?;
        let model = GaussianModel::fit(&matrix(logits)?, &config).map_err(to_py)?;
        Ok(PyCalibrator { model, mode: config.mode })
    }

    #[getter]
    fn means(&self) -> Vec<Vec<f64>> {
        rows(self.model.means())
    }

    #[getter]
    fn log_priors(&self) -> Vec<f64> {
        self.model.log_priors().to_vec()
    }

    #[getter]
    fn covariance(&self) -> Vec<Vec<f64>> {
        rows(self.model.covariance())
    }

    #[getter]
    fn sigma_inv_scale(&self) -> f64 {
        self.model.sigma_inv_scale()
    }

    fn posteriors(&self, logits: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let out = posteriors_for(&self.model, &matrix(logits)?, self.mode).map_err(to_py)?;
        Ok(rows(&out.posteriors))
    }

    fn log_posteriors(&self, logits: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let out = posteriors_for(&self.model, &matrix(logits)?, self.mode).map_err(to_py)?;
        Ok(rows(&out.log_posteriors))
    }
}

fn bundle(
    logits: Vec<Vec<f64>>,
    features: Option<Vec<Vec<f64>>>,
    weights: Option<Vec<Vec<f64>>>,
    bias: Option<Vec<f64>>,
    val_logits: Option<Vec<Vec<f64>>>,
    val_labels: Option<Vec<i64>>,
) -> PyResult<DatasetBundle> {
    let mut b = DatasetBundle::builder(matrix(logits)?);
    if let Some(f) = features {
        b = b.features(matrix(f)?);
    }
    if let Some(w) = weights {
        b = b.weights(matrix(w)?);
    }
    if let Some(v) = bias {
        b = b.bias(v);
    }
    if let Some(v) = val_logits {
        b = b.val_logits(matrix(v)?);
    }
    if let Some(l) = val_labels {
        b = b.val_labels(l);
    }
    b.build().map_err(to_py)
}

/// Predicts target accuracy with the calibrated gradient-norm estimator.
#[pyfunction]
#[pyo3(signature = (
    logits, features = None, weights = None, bias = None,
    mode = "bayes", eq5_literal = false, cov_jitter = 1e-6, normalize_threshold = 32,
))]
#[allow(clippy::too_many_arguments)]
fn predict_accuracy(
    py: Python<'_>,
    logits: Vec<Vec<f64>>,
    features: Option<Vec<Vec<f64>>>,
    weights: Option<Vec<Vec<f64>>>,
    bias: Option<Vec<f64>>,
    mode: &str,
    eq5_literal: bool,
    cov_jitter: f64,
    normalize_threshold: usize,
) -> PyResult<PyReport> {
    let config = EstimatorConfig {
        calibrator: calibrator_config(mode, cov_jitter, normalize_threshold)?,
        eq5_literal,
    };
    let b = bundle(logits, features, weights, bias, None, None)?;
    let inner = py.allow_threads(|| estimator::predict_accuracy(&b, &config)).map_err(to_py)?;
    Ok(PyReport { inner })
}

/// Runs one baseline by id: ac, nuclear, gradnorm, atc-prob, atc-entropy,
/// atc-energy, doc or cot.
#[pyfunction]
#[pyo3(signature = (method, logits, val_logits = None, val_labels = None, temperature = 1.0, energy_temperature = 1.0))]
fn baseline(
    py: Python<'_>,
    method: &str,
    logits: Vec<Vec<f64>>,
    val_logits: Option<Vec<Vec<f64>>>,
    val_labels: Option<Vec<i64>>,
    temperature: f64,
    energy_temperature: f64,
) -> PyResult<PyReport> {
    let method: Method = method.parse().map_err(to_py)?;
    let config = BaselineConfig {
        temperature,
        energy_temperature,
        ..BaselineConfig::default()
    };
    let b = bundle(logits, None, None, None, val_logits, val_labels)?;
    let inner = py.allow_threads(|| baselines::run(method, &b, &config)).map_err(to_py)?;
    Ok(PyReport { inner })
}

#[pyfunction]
fn baseline_methods() -> Vec<&'static str> {
    Method::ALL.iter().map(|m| m.id()).collect()
}

/// Reads an `.npy` or `.csv` file. Rank-2 arrays come back as lists of rows.
#[pyfunction]
fn read_array(py: Python<'_>, path: &str) -> PyResult<PyObject> {
    let a = ingest::read_array(path).map_err(to_py)?;
    let obj = match (&a.data, a.shape.as_slice()) {
        (ArrayData::F64(v), [_]) => v.clone().into_pyobject(py)?.into_any().unbind(),
        (ArrayData::I64(v), [_]) => v.clone().into_pyobject(py)?.into_any().unbind(),
        (ArrayData::F64(v), [_, c]) => {
            let rows: Vec<Vec<f64>> = v.chunks(*c).map(<[f64]>::to_vec).collect();
            rows.into_pyobject(py)?.into_any().unbind()
        }
        (ArrayData::I64(v), [_, c]) => {
            let rows: Vec<Vec<i64>> = v.chunks(*c).map(<[i64]>::to_vec).collect();
            rows.into_pyobject(py)?.into_any().unbind()
        }
        (_, shape) => return Err(InputError::new_err(format!("unsupported shape {shape:?}"))),
    };
    Ok(obj)
}

/// Writes a real matrix as `<f8` NPY.
#[pyfunction]
fn write_matrix(path: &str, values: Vec<Vec<f64>>) -> PyResult<()> {
    ingest::write_matrix(path, &matrix(values)?).map_err(to_py)
}

/// Writes a real vector as `<f8` NPY.
#[pyfunction]
fn write_vector(path: &str, values: Vec<f64>) -> PyResult<()> {
    ingest::write_array(path, &NdArray::from_f64(values)).map_err(to_py)
}

/// Writes integer labels as `<i8` NPY.
#[pyfunction]
fn write_labels(path: &str, labels: Vec<i64>) -> PyResult<()> {
    let array = NdArray {
        shape: vec![labels.len()],
        data: ArrayData::I64(labels),
    };
    ingest::write_array(path, &array).map_err(to_py)
}

/// Runs the benchmark and returns the MAE table as JSON text.
#[pyfunction]
#[pyo3(signature = (suite = None, seed = 0, ratios = vec![0.01, 0.05, 0.1, 1.0], trials = 20, methods = None))]
fn run_bench(
    py: Python<'_>,
    suite: Option<&str>,
    seed: u64,
    ratios: Vec<f64>,
    trials: usize,
    methods: Option<Vec<String>>,
) -> PyResult<String> {
    let mut config = SuiteConfig {
        ratios,
        trials,
        seed,
        ..SuiteConfig::default()
    };
    if let Some(ids) = methods {
        config.methods = ids
            .iter()
            .map(|s| BenchMethod::parse(s))
            .collect::<sfpp::Result<_>>()
            .map_err(to_py)?;
    }
    let scenarios = match suite {
        None | Some("default") => bench::default_suite(seed),
        Some(path) => bench::load_suite(path).map_err(to_py)?,
    };
    let table = py.allow_threads(|| bench::run_suite(&scenarios, &config)).map_err(to_py)?;
    Ok(table.to_json())
}

#[pymodule]
fn pysfpp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyReport>()?;
    m.add_class::<PyCalibrator>()?;
    m.add_function(wrap_pyfunction!(predict_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(baseline, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_methods, m)?)?;
    m.add_function(wrap_pyfunction!(read_array, m)?)?;
    m.add_function(wrap_pyfunction!(write_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(write_vector, m)?)?;
    m.add_function(wrap_pyfunction!(write_labels, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    let py = m.py();
    m.add("InputError", py.get_type::<InputError>())?;
    m.add("NumericalError", py.get_type::<NumericalError>())?;
    m.add("MissingValidationError", py.get_type::<MissingValidationError>())?;
    Ok(())
}
