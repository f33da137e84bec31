//! Python bindings. Matrices cross the boundary as lists of rows; reports as dicts.

use nalgebra::DMatrix;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde_json::Value;

use qubits::pipeline::{self, InputConfig, LambdaMode, RunConfig, SolverKind};
use qubits::{analysis, annealer, qubo, similarity, synth};
use qubits::{AnnealParams, Dataset, Error, LambdaRegime, SimilarityKind, SimilarityMatrix};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        e if e.is_usage() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Parses a kebab-case enum tag through its serde representation.
fn tag<T: DeserializeOwned>(what: &str, value: &str) -> PyResult<T> {
    serde_json::from_value(Value::String(value.to_owned()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} {value:?}")))
}

fn to_py<'py>(py: Python<'py>, json: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (json,))
}

fn square(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn run_config(
    source: &str,
    metric: &str,
    k: usize,
    regime: &str,
    seed: u64,
    sweeps: Option<usize>,
    restarts: Option<usize>,
) -> PyResult<RunConfig> {
    let mut cfg = RunConfig::new(InputConfig::new(source), tag("metric", metric)?, k);
    cfg.lambda = LambdaMode::Auto {
        regime: tag("regime", regime)?,
    };
    cfg.seed = seed;
    cfg.solver.sweeps = sweeps;
    cfg.solver.restarts = restarts;
    Ok(cfg)
}

/// Synthetic oscillating frames; returns a dict with `frames`, `clean`, `phases`.
#[pyfunction]
#[pyo3(signature = (n_frames=270, height=64, width=64, n_periods=10.1, amplitude=0.02, noise_sigma=0.02, seed=0))]
#[allow(clippy::too_many_arguments)]
fn synth_frames<'py>(
    py: Python<'py>,
    n_frames: usize,
    height: usize,
    width: usize,
    n_periods: f64,
    amplitude: f64,
    noise_sigma: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = synth::SynthSpec {
        n_frames,
        height,
        width,
        n_periods,
        amplitude,
        noise_sigma,
        seed,
    };
    let out = synth::generate(&spec).map_err(py_err)?;
    let dict = PyDict::new(py);
    dict.set_item("frames", out.dataset.rows())?;
    dict.set_item("clean", out.clean.rows())?;
    dict.set_item("phases", out.phases)?;
    dict.set_item("shape", (height, width))?;
    Ok(dict)
}

/// Pairwise similarity of the rows, without preprocessing.
#[pyfunction]
#[pyo3(signature = (rows, metric="cosine"))]
fn similarity_matrix(rows: Vec<Vec<f64>>, metric: &str) -> PyResult<Vec<Vec<f64>>> {
    let d = Dataset::from_rows(&rows, None).map_err(py_err)?;
    let s = similarity::compute(&d, tag("metric", metric)?).map_err(py_err)?;
    Ok(matrix_rows(s.values()))
}

/// Angular distance `|sin(θ/2)|` of a cosine-similarity matrix.
#[pyfunction]
fn angular_distance(sim: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let s = SimilarityMatrix::from_matrix(square(&sim)?, SimilarityKind::Cosine).map_err(py_err)?;
    let d = similarity::angular_distance(&s).map_err(py_err)?;
    Ok(matrix_rows(d.values()))
}

/// Default `(lambda1, lambda2)` for a similarity matrix.
#[pyfunction]
#[pyo3(signature = (sim, k, regime="strict"))]
fn auto_lambda(sim: Vec<Vec<f64>>, k: usize, regime: &str) -> PyResult<(f64, f64)> {
    let s = SimilarityMatrix::from_matrix(square(&sim)?, SimilarityKind::Cosine).map_err(py_err)?;
    let regime: LambdaRegime = tag("regime", regime)?;
    qubo::auto_lambda(&s, k, regime).map_err(py_err)
}

/// Two-dimensional classical MDS embedding of a distance matrix.
#[pyfunction]
fn mds(distances: Vec<Vec<f64>>) -> PyResult<Vec<[f64; 2]>> {
    analysis::classical_mds_from_distances(&square(&distances)?).map_err(py_err)
}

/// QUBO for balanced k-way clustering of a similarity matrix.
#[pyclass(module = "qubits_py", frozen)]
struct Qubo {
    model: qubo::QuboModel,
}

#[pymethods]
impl Qubo {
    #[new]
    fn new(sim: Vec<Vec<f64>>, k: usize, lambda1: f64, lambda2: f64) -> PyResult<Self> {
        let s =
            SimilarityMatrix::from_matrix(square(&sim)?, SimilarityKind::Cosine).map_err(py_err)?;
        let model = qubo::build(&s, k, lambda1, lambda2).map_err(py_err)?;
        Ok(Self { model })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let model = qubo::QuboModel::from_json(text).map_err(py_err)?;
        Ok(Self { model })
    }

    #[getter]
    fn n_vars(&self) -> usize {
        self.model.n_vars()
    }

    #[getter]
    fn offset(&self) -> f64 {
        self.model.offset()
    }

    fn energy(&self, bits: Vec<u8>) -> PyResult<f64> {
        self.model.energy(&bits).map_err(py_err)
    }

    fn to_json(&self) -> String {
        self.model.to_json()
    }

    /// Simulated annealing; unset parameters use the model's defaults.
    #[pyo3(signature = (sweeps=None, restarts=None, t_initial=None, t_final=None, seed=0))]
    fn solve<'py>(
        &self,
        py: Python<'py>,
        sweeps: Option<usize>,
        restarts: Option<usize>,
        t_initial: Option<f64>,
        t_final: Option<f64>,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let defaults = annealer::default_params(&self.model);
        let params = AnnealParams {
            sweeps: sweeps.unwrap_or(defaults.sweeps),
            restarts: restarts.unwrap_or(defaults.restarts),
            t_initial: t_initial.unwrap_or(defaults.t_initial),
            t_final: t_final.unwrap_or(defaults.t_final),
            seed,
            ..defaults
        };
        let model = &self.model;
        let result = py
            .detach(|| annealer::solve(model, &params))
            .map_err(py_err)?;
        to_py(
            py,
            &serde_json::to_string(&result).expect("result serializes"),
        )
    }

    fn brute_force<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let model = &self.model;
        let result = py.detach(|| annealer::brute_force(model)).map_err(py_err)?;
        to_py(
            py,
            &serde_json::to_string(&result).expect("result serializes"),
        )
    }

    /// Greedy descent from `bits`; returns `(bits, energy)`.
    fn polish(&self, bits: Vec<u8>) -> PyResult<(Vec<u8>, f64)> {
        annealer::polish(&self.model, &bits).map_err(py_err)
    }
}

/// Full clustering pipeline on in-memory rows; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (rows, k, metric="cosine", labels=None, regime="strict", seed=0, sweeps=None, restarts=None, brute_force=false))]
#[allow(clippy::too_many_arguments)]
fn cluster<'py>(
    py: Python<'py>,
    rows: Vec<Vec<f64>>,
    k: usize,
    metric: &str,
    labels: Option<Vec<i64>>,
    regime: &str,
    seed: u64,
    sweeps: Option<usize>,
    restarts: Option<usize>,
    brute_force: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = run_config("<memory>", metric, k, regime, seed, sweeps, restarts)?;
    if brute_force {
        cfg.solver.kind = SolverKind::BruteForce;
    }
    let data = Dataset::from_rows(&rows, labels).map_err(py_err)?;
    let report = py
        .detach(|| pipeline::cluster_dataset(&cfg, data))
        .map_err(py_err)?;
    to_py(py, &report.to_json())
}

/// k-means++ baseline on in-memory rows; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (rows, k, metric="cosine", labels=None, seed=0, n_init=1))]
fn baseline<'py>(
    py: Python<'py>,
    rows: Vec<Vec<f64>>,
    k: usize,
    metric: &str,
    labels: Option<Vec<i64>>,
    seed: u64,
    n_init: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = run_config("<memory>", metric, k, "strict", seed, None, None)?;
    cfg.subcommand = "baseline".into();
    cfg.kmeans.n_init = n_init;
    let data = Dataset::from_rows(&rows, labels).map_err(py_err)?;
    let report = py
        .detach(|| pipeline::baseline_dataset(&cfg, data))
        .map_err(py_err)?;
    to_py(py, &report.to_json())
}

/// Runs a serialized run configuration (the CLI's config format) end to end.
#[pyfunction]
fn run<'py>(py: Python<'py>, config_json: &str) -> PyResult<Bound<'py, PyAny>> {
    let cfg = RunConfig::from_json(config_json).map_err(py_err)?;
    let report = py
        .detach(|| match cfg.subcommand.as_str() {
            "baseline" => pipeline::run_baseline(&cfg),
            _ => pipeline::run_cluster(&cfg),
        })
        .map_err(py_err)?;
    to_py(py, &report.to_json())
}

#[pymodule]
fn qubits_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(synth_frames, m)?)?;
    m.add_function(wrap_pyfunction!(similarity_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(angular_distance, m)?)?;
    m.add_function(wrap_pyfunction!(auto_lambda, m)?)?;
    m.add_function(wrap_pyfunction!(mds, m)?)?;
    m.add_function(wrap_pyfunction!(cluster, m)?)?;
    m.add_function(wrap_pyfunction!(baseline, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_class::<Qubo>()?;
    Ok(())
}
