//! Python bindings: configs, searches, comparisons, bench tables and the
//! analysis primitives on plain lists.

use perturbnas::analysis::{lambda_max_power, smoothed_gap_mc, HessianBasis, PowerConfig, QuadraticObjective};
use perturbnas::data::DatasetSplit;
use perturbnas::harness::{self, ExperimentConfig, HarnessError, Overrides};
use perturbnas::minibench::{self, BenchTable};
use perturbnas::search::{self, EpsilonSchedule, Norm, SearchOutcome, Trajectory};
use perturbnas::supernet::{DiscreteArch, Supernet};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn harness_err(e: HarnessError) -> PyErr {
    match e {
        HarnessError::Aborted(_) => PyRuntimeError::new_err(e.to_string()),
        e => err(e),
    }
}

/// JSON text to Python objects through the stdlib parser.
fn json<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn square(matrix: Vec<Vec<f64>>) -> PyResult<(usize, Vec<f64>)> {
    let n = matrix.len();
    if matrix.iter().any(|r| r.len() != n) {
        return Err(err("matrix must be square"));
    }
    Ok((n, matrix.into_iter().flatten().collect()))
}

#[pyclass(name = "ExperimentConfig", module = "perturbnas", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    /// The built-in default experiment.
    #[new]
    fn new() -> Self {
        Self {
            inner: ExperimentConfig::default(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::from_toml(text).map_err(harness_err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::load(path.as_ref()).map_err(harness_err)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    /// Same overrides as the command line; returns a new config.
    #[pyo3(signature = (*, seed=None, method=None, eps_start=None, eps_end=None, pgd_steps=None, pgd_lr=None, out=None))]
    #[allow(clippy::too_many_arguments)]
    fn with_overrides(
        &self,
        seed: Option<u64>,
        method: Option<String>,
        eps_start: Option<f64>,
        eps_end: Option<f64>,
        pgd_steps: Option<usize>,
        pgd_lr: Option<f64>,
        out: Option<String>,
    ) -> PyResult<Self> {
        let mut inner = self.inner.clone();
        inner
            .apply(&Overrides {
                seed,
                method,
                eps_start,
                eps_end,
                pgd_steps,
                pgd_lr,
                out: out.map(Into::into),
            })
            .map_err(harness_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.seeds.clone()
    }

    #[getter]
    fn methods(&self) -> Vec<String> {
        self.inner.methods.clone()
    }

    #[getter]
    fn output_dir(&self) -> String {
        self.inner.output_dir.display().to_string()
    }

    fn __repr__(&self) -> String {
        format!(
            "ExperimentConfig(methods={:?}, seeds={:?}, output_dir={:?})",
            self.inner.methods, self.inner.seeds, self.inner.output_dir
        )
    }
}

#[pyclass(name = "Dataset", module = "perturbnas", frozen)]
struct PyDataset {
    inner: DatasetSplit,
}

fn split_lists(s: &perturbnas::supernet::Samples) -> (Vec<Vec<f64>>, Vec<usize>) {
    let cols = s.num_features();
    let rows = s.features.data().chunks(cols.max(1)).map(<[f64]>::to_vec).collect();
    (rows, s.labels.clone())
}

#[pymethods]
impl PyDataset {
    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    #[getter]
    fn num_features(&self) -> usize {
        self.inner.num_features()
    }

    /// `(features, labels)` of `train`, `val` or `test`.
    fn split(&self, name: &str) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
        Ok(match name {
            "train" => split_lists(&self.inner.train),
            "val" => split_lists(&self.inner.val),
            "test" => split_lists(&self.inner.test),
            other => return Err(err(format!("unknown split `{other}`"))),
        })
    }

    fn content_hash(&self) -> String {
        self.inner.content_hash()
    }
}

#[pyclass(name = "SearchResult", module = "perturbnas", frozen)]
struct PySearchResult {
    outcome: SearchOutcome,
}

#[pymethods]
impl PySearchResult {
    #[getter]
    fn encoding(&self) -> String {
        self.outcome.final_arch.encoding()
    }

    #[getter]
    fn alpha(&self) -> Vec<f64> {
        self.outcome.alpha.as_slice().to_vec()
    }

    #[getter]
    fn aborted(&self) -> Option<String> {
        self.outcome.aborted().map(str::to_string)
    }

    /// Per-epoch records as dicts.
    fn records<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json(py, &serde_json::to_string(&self.outcome.trajectory.records).expect("records serialize"))
    }

    fn final_record<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json(py, &serde_json::to_string(&self.outcome.trajectory.final_record).expect("record serializes"))
    }

    fn to_jsonl(&self) -> String {
        self.outcome.trajectory.to_jsonl()
    }
}

#[pyclass(name = "BenchTable", module = "perturbnas", frozen)]
struct PyBenchTable {
    inner: BenchTable,
    space: perturbnas::supernet::CellSpace,
}

#[pymethods]
impl PyBenchTable {
    /// Parses a table written by `to_csv` for the config's cell space.
    #[staticmethod]
    fn from_csv(config: &PyConfig, text: &str) -> PyResult<Self> {
        let space = config.inner.space.clone();
        Ok(Self {
            inner: BenchTable::from_csv(&space, text).map_err(err)?,
            space,
        })
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.inner.fingerprint.clone()
    }

    /// `(val_error, test_error, param_count)` of an encoded architecture such as `"0-3-1"`.
    fn query(&self, encoding: &str) -> PyResult<(f64, f64, usize)> {
        let arch = DiscreteArch::parse_encoding(&self.space, encoding).map_err(err)?;
        let row = self.inner.query(&self.inner.fingerprint, &arch).map_err(err)?;
        Ok((row.val_error, row.test_error, row.param_count))
    }

    /// Encoding of the architecture with the lowest validation error.
    fn best_by_val(&self) -> Option<String> {
        self.inner.best_by_val().map(|(a, _)| a.encoding())
    }

    fn min_test_error(&self) -> Option<f64> {
        self.inner.min_test_error()
    }
}

#[pyfunction]
fn load_dataset(config: &PyConfig) -> PyResult<PyDataset> {
    Ok(PyDataset {
        inner: harness::load_dataset(&config.inner).map_err(harness_err)?,
    })
}

/// One search run in memory; nothing is written to disk.
#[pyfunction]
#[pyo3(signature = (config, method="darts", seed=0))]
fn run_search(py: Python<'_>, config: &PyConfig, method: &str, seed: u64) -> PyResult<PySearchResult> {
    let cfg = config.inner.clone();
    let method = method.to_string();
    let outcome = py
        .detach(move || -> Result<SearchOutcome, HarnessError> {
            let data = harness::load_dataset(&cfg)?;
            let net = Supernet::new(cfg.space.clone(), data.num_features(), data.num_classes)?;
            let search = cfg.search_config(&method, seed)?;
            Ok(search::run_search(&net, &data, &search, None)?)
        })
        .map_err(harness_err)?;
    Ok(PySearchResult { outcome })
}

/// Runs the config's `method` for every seed and writes the run directories.
#[pyfunction]
#[pyo3(signature = (config, workers=1))]
fn run_experiment(py: Python<'_>, config: &PyConfig, workers: usize) -> PyResult<Vec<String>> {
    let cfg = config.inner.clone();
    let summary = py
        .detach(move || harness::run_experiment(&cfg, workers))
        .map_err(harness_err)?;
    Ok(summary.runs.iter().map(|r| r.dir.display().to_string()).collect())
}

/// Runs every (method, seed) pair; returns `(comparison_csv, summary_text)`.
#[pyfunction]
#[pyo3(signature = (config, methods=None, workers=1))]
fn compare_methods(
    py: Python<'_>,
    config: &PyConfig,
    methods: Option<Vec<String>>,
    workers: usize,
) -> PyResult<(String, String)> {
    let cfg = config.inner.clone();
    let methods = methods.unwrap_or_else(|| cfg.methods.clone());
    let report = py
        .detach(move || harness::compare_methods(&cfg, &methods, workers))
        .map_err(harness_err)?;
    Ok((report.to_csv(), report.summary_text()))
}

#[pyfunction]
#[pyo3(signature = (config, workers=1))]
fn build_bench(py: Python<'_>, config: &PyConfig, workers: usize) -> PyResult<PyBenchTable> {
    let cfg = config.inner.clone();
    let space = cfg.space.clone();
    let inner = py.detach(move || harness::build_bench(&cfg, workers)).map_err(harness_err)?;
    Ok(PyBenchTable { inner, space })
}

/// Parses trajectory JSONL into `(records, final_record)`.
#[pyfunction]
fn parse_trajectory<'py>(py: Python<'py>, text: &str) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let t = Trajectory::from_jsonl(text).map_err(err)?;
    Ok((
        json(py, &serde_json::to_string(&t.records).expect("records serialize"))?,
        json(py, &serde_json::to_string(&t.final_record).expect("record serializes"))?,
    ))
}

#[pyfunction]
fn epsilon_at(epoch: usize, eps_start: f64, eps_end: f64, total_epochs: usize) -> PyResult<f64> {
    let schedule = EpsilonSchedule::new(eps_start, eps_end, total_epochs).map_err(err)?;
    search::epsilon_at(epoch, &schedule).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (delta, eps, norm="linf"))]
fn project_ball(mut delta: Vec<f64>, eps: f64, norm: &str) -> PyResult<Vec<f64>> {
    let norm = match norm {
        "linf" => Norm::Linf,
        "l2" => Norm::L2,
        other => return Err(err(format!("unknown norm `{other}` (linf or l2)"))),
    };
    if !(eps >= 0.0) {
        return Err(err("eps must be non-negative"));
    }
    search::project_ball(&mut delta, eps, norm);
    Ok(delta)
}

#[pyfunction]
#[pyo3(signature = (eps, length, seed=0))]
fn sample_rs_delta(eps: f64, length: usize, seed: u64) -> PyResult<Vec<f64>> {
    if !(eps >= 0.0) {
        return Err(err("eps must be non-negative"));
    }
    Ok(search::sample_rs_delta(eps, length, &mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Largest-magnitude eigenvalue of a symmetric matrix by finite-difference
/// power iteration on `0.5 x^T H x`.
#[pyfunction]
#[pyo3(signature = (matrix, seed=0, max_iters=1000, tol=1e-10))]
fn lambda_max(matrix: Vec<Vec<f64>>, seed: u64, max_iters: usize, tol: f64) -> PyResult<f64> {
    let (n, h) = square(matrix)?;
    let obj = QuadraticObjective::centered(h).map_err(err)?;
    let config = PowerConfig {
        max_iters,
        tol,
        ..PowerConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe = lambda_max_power(&obj, &vec![0.0; n], &config, HessianBasis::PreSoftmaxAlpha, &mut rng).map_err(err)?;
    Ok(probe.lambda_max)
}

/// Monte-Carlo `E[L(x + u)] - L(x)` for uniform `u` in the `eps` box, with
/// `L = 0.5 x^T H x`.
#[pyfunction]
#[pyo3(signature = (matrix, eps, num_samples=100_000, seed=0))]
fn smoothed_gap(matrix: Vec<Vec<f64>>, eps: f64, num_samples: usize, seed: u64) -> PyResult<f64> {
    let (n, h) = square(matrix)?;
    let obj = QuadraticObjective::centered(h).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    smoothed_gap_mc(&obj, &vec![0.0; n], eps, num_samples, &mut rng).map_err(err)
}

/// Number of architectures of the config's cell space.
#[pyfunction]
fn num_architectures(config: &PyConfig) -> PyResult<usize> {
    Ok(minibench::enumerate_space(&config.inner.space, usize::MAX).map_err(err)?.len())
}

#[pymodule(name = "perturbnas")]
fn perturbnas_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("METHOD_NAMES", search::METHOD_NAMES.to_vec())?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PySearchResult>()?;
    m.add_class::<PyBenchTable>()?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(run_search, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(compare_methods, m)?)?;
    m.add_function(wrap_pyfunction!(build_bench, m)?)?;
    m.add_function(wrap_pyfunction!(parse_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(epsilon_at, m)?)?;
    m.add_function(wrap_pyfunction!(project_ball, m)?)?;
    m.add_function(wrap_pyfunction!(sample_rs_delta, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_max, m)?)?;
    m.add_function(wrap_pyfunction!(smoothed_gap, m)?)?;
    m.add_function(wrap_pyfunction!(num_architectures, m)?)?;
    Ok(())
}
