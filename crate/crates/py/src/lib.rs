//! Python bindings: flow datasets, graph construction, training, and
//! evaluation, mirroring the CLI defaults.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use egconmix::flow::{generate_synthetic, parse_flow_csv, write_flows_csv, FlowRecord, FlowSchema};
use egconmix::graph::build_graph;
use egconmix::model::ModelConfig;
use egconmix::train::{
    evaluate, load_checkpoint, run_seeds, save_checkpoint, train, Checkpoint, TrainConfig,
};

fn err(e: egconmix::Error) -> PyErr {
    match e {
        egconmix::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// An in-memory list of labeled flows.
#[pyclass(name = "FlowDataset")]
#[derive(Clone)]
struct PyFlowDataset {
    records: Vec<FlowRecord>,
    feature_dim: usize,
}

#[pymethods]
impl PyFlowDataset {
    /// Synthetic two-class flows; attacks originate from a dedicated
    /// attacker subset of endpoints.
    #[staticmethod]
    #[pyo3(signature = (flows=1000, endpoints=50, attack_ratio=0.1, separation=6.0, dim=4, seed=1))]
    fn synthetic(
        flows: usize,
        endpoints: usize,
        attack_ratio: f64,
        separation: f64,
        dim: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let records = generate_synthetic(endpoints, flows, attack_ratio, separation, dim, seed)
            .map_err(err)?;
        Ok(PyFlowDataset {
            records,
            feature_dim: dim,
        })
    }

    /// Loads a CSV in the standard synthetic schema (f0..f{d-1} features).
    #[staticmethod]
    fn from_csv(path: PathBuf, feature_dim: usize) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        let records =
            parse_flow_csv(text.as_bytes(), &FlowSchema::synthetic(feature_dim)).map_err(err)?;
        Ok(PyFlowDataset {
            records,
            feature_dim,
        })
    }

    fn to_csv(&self, path: PathBuf) -> PyResult<()> {
        let mut buf = Vec::new();
        write_flows_csv(&self.records, self.feature_dim, &mut buf).map_err(err)?;
        std::fs::write(&path, buf).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn __len__(&self) -> usize {
        self.records.len()
    }

    fn __repr__(&self) -> String {
        let attacks = self.records.iter().filter(|r| r.label == 1).count();
        format!(
            "FlowDataset({} flows, {} attacks, dim {})",
            self.records.len(),
            attacks,
            self.feature_dim
        )
    }
}

/// Endpoint/flow multigraph summary built from a dataset.
#[pyclass(name = "TrafficGraph")]
struct PyTrafficGraph {
    inner: egconmix::graph::TrafficGraph,
}

#[pymethods]
impl PyTrafficGraph {
    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.num_nodes()
    }

    #[getter]
    fn num_edges(&self) -> usize {
        self.inner.num_edges()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    fn __repr__(&self) -> String {
        format!(
            "TrafficGraph({} nodes, {} edges)",
            self.inner.num_nodes(),
            self.inner.num_edges()
        )
    }
}

/// Trained parameters plus the model shape that produced them.
#[pyclass(name = "Checkpoint")]
struct PyCheckpoint {
    inner: Checkpoint,
}

#[pymethods]
impl PyCheckpoint {
    fn save(&self, path: PathBuf) -> PyResult<()> {
        let mut buf = Vec::new();
        save_checkpoint(&self.inner, &mut buf).map_err(err)?;
        std::fs::write(&path, buf).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let bytes = std::fs::read(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        let inner = load_checkpoint(bytes.as_slice()).map_err(err)?;
        Ok(PyCheckpoint { inner })
    }

    #[getter]
    fn hidden_dim(&self) -> usize {
        self.inner.model.hidden_dim
    }

    #[getter]
    fn train_seed(&self) -> u64 {
        self.inner.train_seed
    }
}

#[allow(clippy::too_many_arguments)]
fn config_from_kwargs(
    epochs: usize,
    lr: f64,
    hidden_dim: usize,
    dropout: f64,
    sigma: usize,
    alpha: f64,
    beta: f64,
    gamma: usize,
    theta: f64,
    enable_mixup: bool,
    enable_contrastive: bool,
    seeds: Option<Vec<u64>>,
) -> TrainConfig {
    let mut config = TrainConfig {
        epochs,
        lr,
        enable_mixup,
        enable_contrastive,
        model: ModelConfig {
            hidden_dim,
            dropout_p: dropout,
            ..Default::default()
        },
        ..Default::default()
    };
    config.mixup.sigma = sigma;
    config.mixup.alpha = alpha;
    config.mixup.beta = beta;
    config.contrastive.gamma = gamma;
    config.contrastive.theta = theta;
    if let Some(seeds) = seeds {
        config.seeds = seeds;
    }
    config
}

#[pyfunction]
#[pyo3(name = "build_graph")]
fn build_graph_py(dataset: &PyFlowDataset) -> PyTrafficGraph {
    PyTrafficGraph {
        inner: build_graph(&dataset.records),
    }
}

/// Trains on a 70/10/20 stratified split of the dataset and returns the
/// checkpoint plus the per-epoch history.
#[pyfunction]
#[pyo3(name = "train")]
#[pyo3(signature = (dataset, seed=1, epochs=200, lr=0.01, hidden_dim=128, dropout=0.2,
    sigma=200, alpha=0.3, beta=0.2, gamma=10, theta=1.0,
    enable_mixup=true, enable_contrastive=true))]
#[allow(clippy::too_many_arguments)]
fn train_py(
    py: Python<'_>,
    dataset: &PyFlowDataset,
    seed: u64,
    epochs: usize,
    lr: f64,
    hidden_dim: usize,
    dropout: f64,
    sigma: usize,
    alpha: f64,
    beta: f64,
    gamma: usize,
    theta: f64,
    enable_mixup: bool,
    enable_contrastive: bool,
) -> PyResult<(PyCheckpoint, Vec<Py<PyDict>>)> {
    let config = config_from_kwargs(
        epochs, lr, hidden_dim, dropout, sigma, alpha, beta, gamma, theta, enable_mixup,
        enable_contrastive, None,
    );
    let split = egconmix::flow::stratified_split(
        &dataset.records,
        egconmix::flow::SplitFractions::standard(),
        seed,
    )
    .map_err(err)?;
    let outcome = train(&split.train, &split.val, &config, seed).map_err(err)?;
    let mut history = Vec::with_capacity(outcome.history.len());
    for h in &outcome.history {
        let d = PyDict::new(py);
        d.set_item("epoch", h.epoch)?;
        d.set_item("loss_c", h.loss_c)?;
        d.set_item("loss_k", h.loss_k)?;
        d.set_item("loss_total", h.loss_total)?;
        d.set_item("val_macro_f1", h.val_macro_f1)?;
        history.push(d.into());
    }
    Ok((
        PyCheckpoint {
            inner: outcome.checkpoint,
        },
        history,
    ))
}

/// Scores every edge of the dataset's graph with a trained checkpoint.
#[pyfunction]
#[pyo3(name = "evaluate")]
fn evaluate_py(py: Python<'_>, checkpoint: &PyCheckpoint, dataset: &PyFlowDataset) -> PyResult<Py<PyDict>> {
    let report = evaluate(
        &checkpoint.inner.params,
        &checkpoint.inner.model,
        &[],
        &dataset.records,
        "python",
    )
    .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("macro_f1", report.macro_f1)?;
    d.set_item("macro_f1_std", report.macro_f1_std)?;
    for (class, s) in report.per_class.iter().enumerate() {
        let c = PyDict::new(py);
        c.set_item("precision", s.precision)?;
        c.set_item("recall", s.recall)?;
        c.set_item("f1", s.f1)?;
        d.set_item(format!("class_{class}"), c)?;
    }
    d.set_item("warnings", report.warnings.clone())?;
    Ok(d.into())
}

/// Splits, trains, and evaluates once per seed; returns the mean macro-F1
/// and per-seed scores.
#[pyfunction]
#[pyo3(name = "run_seeds")]
#[pyo3(signature = (dataset, seeds=vec![1, 2, 3, 4, 5], epochs=200, lr=0.01, hidden_dim=128,
    dropout=0.2, sigma=200, alpha=0.3, beta=0.2, gamma=10, theta=1.0,
    enable_mixup=true, enable_contrastive=true))]
#[allow(clippy::too_many_arguments)]
fn run_seeds_py(
    py: Python<'_>,
    dataset: &PyFlowDataset,
    seeds: Vec<u64>,
    epochs: usize,
    lr: f64,
    hidden_dim: usize,
    dropout: f64,
    sigma: usize,
    alpha: f64,
    beta: f64,
    gamma: usize,
    theta: f64,
    enable_mixup: bool,
    enable_contrastive: bool,
) -> PyResult<Py<PyDict>> {
    let config = config_from_kwargs(
        epochs, lr, hidden_dim, dropout, sigma, alpha, beta, gamma, theta, enable_mixup,
        enable_contrastive, Some(seeds),
    );
    let (report, scores) = run_seeds(&dataset.records, &config, None).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("macro_f1_mean", report.macro_f1)?;
    d.set_item("macro_f1_std", report.macro_f1_std)?;
    d.set_item("scores", scores)?;
    d.set_item("method", config.method_name())?;
    Ok(d.into())
}

#[pymodule]
fn egconmix_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFlowDataset>()?;
    m.add_class::<PyTrafficGraph>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_function(wrap_pyfunction!(build_graph_py, m)?)?;
    m.add_function(wrap_pyfunction!(train_py, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_py, m)?)?;
    m.add_function(wrap_pyfunction!(run_seeds_py, m)?)?;
    Ok(())
}
