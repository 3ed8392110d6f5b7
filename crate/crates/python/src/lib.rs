//! Python bindings. Structured results (fit reports, diagnostics, comparison
//! tables) come back as plain dicts and lists.

use arnet_core::compare::{self, BaselineModel, CompareSettings};
use arnet_core::estimate::{self, EstimationConfig, FitMethod};
use arnet_core::kernels::{Kernel, KernelId};
use arnet_core::likelihood::Panel;
use arnet_core::params::ParamSpec;
use arnet_core::series::{self, SeriesFormat, Snapshot};
use arnet_core::simulate::{self as sim, InitRule, SimConfig};
use arnet_core::ArnetError;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(arnet, OptimizerError, PyException);

fn to_py(e: ArnetError) -> PyErr {
    let msg = e.to_string();
    match e {
        ArnetError::Io { .. }
        | ArnetError::Parse { .. }
        | ArnetError::Dimension { .. }
        | ArnetError::Value { .. }
        | ArnetError::Index { .. } => PyIOError::new_err(msg),
        ArnetError::Optimizer(_) | ArnetError::LpInfeasible | ArnetError::LpUnbounded => {
            OptimizerError::new_err(msg)
        }
        _ => PyValueError::new_err(msg),
    }
}

/// Round-trips through `json` so Python gets native containers.
fn to_object<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import_bound("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_object<T: DeserializeOwned>(py: Python<'_>, obj: Option<&Bound<'_, PyAny>>) -> PyResult<Option<T>> {
    let Some(obj) = obj else { return Ok(None) };
    let text: String = py.import_bound("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn estimation(py: Python<'_>, obj: Option<&Bound<'_, PyAny>>) -> PyResult<EstimationConfig> {
    Ok(from_object(py, obj)?.unwrap_or_default())
}

/// Ordered adjacency snapshots on a common node set.
#[pyclass(module = "arnet")]
#[derive(Clone)]
struct SnapshotSeries {
    inner: series::SnapshotSeries,
}

#[pymethods]
impl SnapshotSeries {
    /// Build from a list of `p x p` 0/1 matrices (upper triangles are read).
    #[new]
    fn new(matrices: Vec<Vec<Vec<u8>>>) -> PyResult<Self> {
        let snaps = matrices
            .iter()
            .map(|m| {
                let p = m.len();
                if m.iter().any(|row| row.len() != p) {
                    return Err(PyValueError::new_err("each snapshot must be a square matrix"));
                }
                let mut s = Snapshot::empty(p);
                for i in 0..p {
                    for j in i + 1..p {
                        s.set(i, j, m[i][j] != 0);
                    }
                }
                Ok(s)
            })
            .collect::<PyResult<Vec<_>>>()?;
        let inner = series::SnapshotSeries::new(snaps).map_err(to_py)?;
        Ok(SnapshotSeries { inner })
    }

    /// `format` is `matrix-text` or `edge-csv`; by default `.csv` means edges.
    #[staticmethod]
    #[pyo3(signature = (path, format=None))]
    fn load(path: std::path::PathBuf, format: Option<&str>) -> PyResult<Self> {
        let format = match format {
            Some(f) => f.parse().map_err(to_py)?,
            None => SeriesFormat::from_path(&path),
        };
        let inner = series::SnapshotSeries::load(&path, format).map_err(to_py)?;
        Ok(SnapshotSeries { inner })
    }

    #[pyo3(signature = (path, format=None))]
    fn save(&self, path: std::path::PathBuf, format: Option<&str>) -> PyResult<()> {
        let format = match format {
            Some(f) => f.parse().map_err(to_py)?,
            None => SeriesFormat::from_path(&path),
        };
        self.inner.save(&path, format).map_err(to_py)
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    /// Snapshot `t` (0-based) as a `p x p` 0/1 matrix.
    fn snapshot(&self, t: usize) -> PyResult<Vec<Vec<u8>>> {
        if t >= self.inner.n() {
            return Err(PyValueError::new_err(format!("snapshot {t} out of range")));
        }
        let s = self.inner.get(t);
        let p = s.p();
        Ok((0..p).map(|i| (0..p).map(|j| s.value(i, j)).collect()).collect())
    }

    fn edge_counts(&self) -> Vec<usize> {
        self.inner.snapshots().iter().map(Snapshot::edge_count).collect()
    }

    fn slice(&self, start: usize, end: usize) -> PyResult<Self> {
        let inner = self.inner.slice(start, end).map_err(to_py)?;
        Ok(SnapshotSeries { inner })
    }

    fn __repr__(&self) -> String {
        format!("SnapshotSeries(p={}, n={})", self.inner.p(), self.inner.n())
    }
}

fn kernel_id(model: &str) -> PyResult<KernelId> {
    model.parse().map_err(to_py)
}

fn baseline(model: &str) -> PyResult<BaselineModel> {
    model.parse().map_err(to_py)
}

/// Names of the kernels accepted by `simulate` and `fit`.
#[pyfunction]
fn kernels() -> Vec<&'static str> {
    KernelId::ALL.iter().map(|k| k.as_str()).collect()
}

/// Names of the models accepted by `compare` and `forecast`.
#[pyfunction]
fn baseline_models() -> Vec<&'static str> {
    BaselineModel::ALL.iter().map(|m| m.as_str()).collect()
}

/// Simulate `n` snapshots. `params` holds `globals`, `xi`, `eta` (or `values`).
#[pyfunction]
#[pyo3(signature = (model, p, n, params, seed=0, burn_in=200, init_density=0.1))]
fn simulate(
    py: Python<'_>,
    model: &str,
    p: usize,
    n: usize,
    params: &Bound<'_, PyDict>,
    seed: u64,
    burn_in: usize,
    init_density: f64,
) -> PyResult<SnapshotSeries> {
    let kernel = Kernel::new(kernel_id(model)?, p).map_err(to_py)?;
    let spec: ParamSpec = from_object(py, Some(params.as_any()))?.expect("given");
    let truth = spec.resolve(kernel).map_err(to_py)?;
    let mut cfg = SimConfig::new(truth, n, seed);
    cfg.burn_in = burn_in;
    cfg.init = InitRule::ErdosRenyi { rho: init_density };
    let inner = py.allow_threads(|| sim::simulate(&cfg)).map_err(to_py)?;
    Ok(SnapshotSeries { inner })
}

/// Fit `model` and return the report as a dict. `config` takes the keys of
/// the estimation block (`init_grid`, `ci_level`, ...).
#[pyfunction]
#[pyo3(signature = (series, model, method="mle", config=None))]
fn fit(
    py: Python<'_>,
    series: &SnapshotSeries,
    model: &str,
    method: &str,
    config: Option<&Bound<'_, PyAny>>,
) -> PyResult<PyObject> {
    let kernel = Kernel::new(kernel_id(model)?, series.inner.p()).map_err(to_py)?;
    let method: FitMethod = method.parse().map_err(to_py)?;
    let cfg = estimation(py, config)?;
    let report = py
        .allow_threads(|| {
            let panel = Panel::new(&kernel, &series.inner)?;
            estimate::fit(&panel, method, &cfg)
        })
        .map_err(to_py)?;
    to_object(py, &report)
}

/// Density, growth and dissolution series plus the neighbour-count tables.
#[pyfunction]
fn diagnostics(py: Python<'_>, series: &SnapshotSeries) -> PyResult<PyObject> {
    let table = sim::diagnostics(&series.inner).map_err(to_py)?;
    to_object(py, &table)
}

/// AIC/BIC and forecast AUCs of the baseline models fitted on the first
/// `split` snapshots.
#[pyfunction]
#[pyo3(signature = (series, split, steps=vec![1], models=None, mc_paths=200, seed=0, config=None))]
#[allow(clippy::too_many_arguments)]
fn compare_models(
    py: Python<'_>,
    series: &SnapshotSeries,
    split: usize,
    steps: Vec<usize>,
    models: Option<Vec<String>>,
    mc_paths: usize,
    seed: u64,
    config: Option<&Bound<'_, PyAny>>,
) -> PyResult<PyObject> {
    let models = match models {
        Some(list) => list.iter().map(|m| baseline(m)).collect::<PyResult<Vec<_>>>()?,
        None => BaselineModel::ALL.to_vec(),
    };
    let settings = CompareSettings {
        models,
        mc_paths,
        seed,
        estimation: estimation(py, config)?,
    };
    let report = py
        .allow_threads(|| compare::compare_models(&series.inner, split, &steps, &settings))
        .map_err(to_py)?;
    to_object(py, &report)
}

/// Edge probabilities `step` snapshots past the end of `series` under
/// `model` fitted on all of `series`, as a `p x p` nested list.
#[pyfunction]
#[pyo3(signature = (series, model, step=1, mc_paths=200, seed=0, config=None))]
fn forecast(
    py: Python<'_>,
    series: &SnapshotSeries,
    model: &str,
    step: usize,
    mc_paths: usize,
    seed: u64,
    config: Option<&Bound<'_, PyAny>>,
) -> PyResult<Vec<Vec<f64>>> {
    let model = baseline(model)?;
    let cfg = estimation(py, config)?;
    let probs = py
        .allow_threads(|| {
            let fitted = compare::fit_baseline_with(model, &series.inner, &cfg)?;
            compare::forecast(&fitted, &series.inner, step, mc_paths, seed)
        })
        .map_err(to_py)?;
    Ok(probs.row_iter().map(|r| r.iter().copied().collect()).collect())
}

/// ROC curve of `scores` against 0/1 `truth`: `(fpr, tpr, auc)`.
#[pyfunction]
fn roc(scores: Vec<f64>, truth: Vec<bool>) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
    let curve = compare::roc(&scores, &truth).map_err(to_py)?;
    let (fpr, tpr) = curve.points.iter().copied().unzip();
    Ok((fpr, tpr, curve.auc))
}

#[pymodule]
fn arnet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<SnapshotSeries>()?;
    m.add("OptimizerError", m.py().get_type_bound::<OptimizerError>())?;
    m.add_function(wrap_pyfunction!(kernels, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_models, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(diagnostics, m)?)?;
    m.add_function(wrap_pyfunction!(compare_models, m)?)?;
    m.add_function(wrap_pyfunction!(forecast, m)?)?;
    m.add_function(wrap_pyfunction!(roc, m)?)?;
    Ok(())
}
