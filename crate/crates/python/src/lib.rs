//! Python bindings: `sdr_ate.Dataset`, `simulate`, `estimate` and `bench`.

use numpy::{IntoPyArray, PyArray1, PyArray2, PyReadonlyArray1, PyReadonlyArray2};
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdr_core::bench::{emit_table, parse_json, run_monte_carlo, BenchResult, ExperimentPlan, TableFormat};
use sdr_core::simulate::simulate_replication;
use sdr_core::{AteEstimate, EstimatorConfig, Method, ScenarioConfig, SdrError};

create_exception!(sdr_ate, EstimationError, PyRuntimeError);

fn to_py(err: SdrError) -> PyErr {
    if err.is_validation() {
        PyValueError::new_err(err.to_string())
    } else {
        EstimationError::new_err(err.to_string())
    }
}

/// Serializes a Python mapping with the standard `json` module.
fn dict_to_json(py: Python<'_>, obj: &Bound<'_, PyDict>) -> PyResult<String> {
    py.import("json")?.call_method1("dumps", (obj,))?.extract()
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Observed sample: outcomes `y`, binary treatment `w`, covariates `x` (n x p).
#[pyclass(module = "sdr_ate", frozen)]
struct Dataset {
    inner: sdr_core::Dataset,
}

#[pymethods]
impl Dataset {
    #[new]
    fn new(x: PyReadonlyArray2<'_, f64>, y: PyReadonlyArray1<'_, f64>, w: PyReadonlyArray1<'_, i64>) -> PyResult<Self> {
        let w = w
            .as_array()
            .iter()
            .enumerate()
            .map(|(row, &v)| match v {
                0 | 1 => Ok(v as u8),
                _ => Err(SdrError::NonBinaryTreatment { row }),
            })
            .collect::<Result<Vec<u8>, _>>()
            .map_err(to_py)?;
        let inner = sdr_core::Dataset::new(x.as_array().to_owned(), y.as_array().to_owned(), w).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Reads a `y,w,x1..xp` CSV file.
    #[staticmethod]
    #[pyo3(signature = (path, header = true))]
    fn load(path: std::path::PathBuf, header: bool) -> PyResult<Self> {
        let inner = sdr_core::load_dataset(&path, header).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        sdr_core::save_dataset(&self.inner, &path).map_err(to_py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn x<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray2<f64>> {
        self.inner.x().to_owned().into_pyarray(py)
    }

    #[getter]
    fn y<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray1<f64>> {
        self.inner.y().to_owned().into_pyarray(py)
    }

    #[getter]
    fn w<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray1<i64>> {
        PyArray1::from_iter(py, self.inner.w().iter().map(|&v| i64::from(v)))
    }

    /// Copy with a trailing column of ones.
    fn with_intercept(&self) -> Self {
        Self {
            inner: self.inner.with_intercept(),
        }
    }

    /// Copy with treatment labels swapped and outcomes negated.
    fn flipped(&self) -> Self {
        Self {
            inner: self.inner.flipped(),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, p={}, treated={})",
            self.inner.n(),
            self.inner.p(),
            self.inner.arm_size(1)
        )
    }
}

/// Population parameters of a simulated design.
#[pyclass(module = "sdr_ate", frozen)]
struct TrueParams {
    inner: sdr_core::TrueParams,
}

#[pymethods]
impl TrueParams {
    #[getter]
    fn tau_true(&self) -> f64 {
        self.inner.tau_true
    }

    #[getter]
    fn theta<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray1<f64>> {
        PyArray1::from_slice(py, &self.inner.theta)
    }

    #[getter]
    fn beta1<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray1<f64>> {
        PyArray1::from_slice(py, &self.inner.beta1)
    }

    #[getter]
    fn beta0<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray1<f64>> {
        PyArray1::from_slice(py, &self.inner.beta0)
    }

    fn __repr__(&self) -> String {
        format!("TrueParams(p={}, tau_true={})", self.inner.theta.len(), self.inner.tau_true)
    }
}

/// Point estimate, standard error, confidence interval and diagnostics.
#[pyclass(module = "sdr_ate", frozen)]
struct Estimate {
    inner: AteEstimate,
}

#[pymethods]
impl Estimate {
    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method().as_str()
    }

    #[getter]
    fn tau_hat(&self) -> f64 {
        self.inner.tau_hat()
    }

    #[getter]
    fn v_hat(&self) -> Option<f64> {
        self.inner.v_hat()
    }

    #[getter]
    fn se(&self) -> Option<f64> {
        match &self.inner {
            AteEstimate::Sdr(e) => Some(e.se),
            AteEstimate::Baseline(e) => e.se,
        }
    }

    #[getter]
    fn ci(&self) -> Option<(f64, f64)> {
        self.inner.interval()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged()
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings().to_vec()
    }

    fn covers(&self, tau: f64) -> Option<bool> {
        self.inner.covers(tau)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// The full result, including diagnostics, as a dict.
    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.to_json()?)
    }

    fn __repr__(&self) -> String {
        let ci = self
            .inner
            .interval()
            .map_or_else(|| "None".to_string(), |(lo, hi)| format!("({lo:.4}, {hi:.4})"));
        format!("Estimate(method={}, tau_hat={:.4}, ci={ci})", self.inner.method(), self.inner.tau_hat())
    }
}

/// Draws replication `rep` of a simulated design.
#[pyfunction]
#[pyo3(signature = (n, p, s_theta, s_beta, *, rho = 0.6, r_squared = 0.5, heteroskedastic = false, seed = 0, rep = 0))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    n: usize,
    p: usize,
    s_theta: usize,
    s_beta: usize,
    rho: f64,
    r_squared: f64,
    heteroskedastic: bool,
    seed: u64,
    rep: u64,
) -> PyResult<(Dataset, TrueParams)> {
    let config = ScenarioConfig {
        n,
        p,
        rho,
        s_theta,
        s_beta,
        r_squared,
        heteroskedastic,
        seed,
    };
    let (data, truth) = py.detach(|| simulate_replication(&config, rep)).map_err(to_py)?;
    Ok((Dataset { inner: data }, TrueParams { inner: truth }))
}

/// Estimates the ATE with `method` ("sdr", "aipw" or "arb"). `config` holds
/// estimator settings (unknown keys are rejected); `seed` drives the fold
/// split.
#[pyfunction]
#[pyo3(signature = (data, method = "sdr", config = None, seed = 0))]
fn estimate(
    py: Python<'_>,
    data: &Dataset,
    method: &str,
    config: Option<&Bound<'_, PyDict>>,
    seed: u64,
) -> PyResult<Estimate> {
    let method: Method = method.parse().map_err(to_py)?;
    let cfg: EstimatorConfig = match config {
        Some(d) => parse_json(&dict_to_json(py, d)?).map_err(to_py)?,
        None => EstimatorConfig::default(),
    };
    let inner = py
        .detach(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sdr_core::estimate_ate(method, &data.inner, &cfg, &mut rng)
        })
        .map_err(to_py)?;
    Ok(Estimate { inner })
}

/// Monte Carlo results with per-replication records.
#[pyclass(module = "sdr_ate", frozen)]
struct Bench {
    inner: BenchResult,
}

#[pymethods]
impl Bench {
    /// Aggregate table: "markdown" or "csv".
    #[pyo3(signature = (format = "markdown"))]
    fn table(&self, format: &str) -> PyResult<String> {
        let format = match format {
            "markdown" | "md" => TableFormat::Markdown,
            "csv" => TableFormat::Csv,
            other => return Err(PyValueError::new_err(format!("unknown table format {other:?}"))),
        };
        Ok(emit_table(&self.inner, format))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.to_json()?)
    }
}

/// Runs an experiment plan given as a dict with the plan-file schema.
#[pyfunction(name = "bench")]
#[pyo3(signature = (plan, *, reps = None, seed = None, workers = None))]
fn run_bench(
    py: Python<'_>,
    plan: &Bound<'_, PyDict>,
    reps: Option<usize>,
    seed: Option<u64>,
    workers: Option<usize>,
) -> PyResult<Bench> {
    let mut plan = ExperimentPlan::from_json(&dict_to_json(py, plan)?).map_err(to_py)?;
    if let Some(r) = reps {
        plan.reps = r;
    }
    if let Some(s) = seed {
        plan.master_seed = s;
    }
    if workers.is_some() {
        plan.parallelism = workers;
    }
    let inner = py.detach(|| run_monte_carlo(&plan)).map_err(to_py)?;
    Ok(Bench { inner })
}

#[pymodule]
pub fn sdr_ate(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<TrueParams>()?;
    m.add_class::<Estimate>()?;
    m.add_class::<Bench>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    m.add("EstimationError", m.py().get_type::<EstimationError>())?;
    Ok(())
}
