//! Python module `tabxcheck_py`.
//!
//! Structured results (metrics, logs, paths) come back as plain dicts and
//! lists; documents, corpora and embedders are wrapped as classes.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use tabxcheck::classifier::{self, BackendConfig, Decision, PromptTemplates};
use tabxcheck::cnap;
use tabxcheck::config::RunConfig;
use tabxcheck::contrastive::{self, Batch, LossParams, Objective, TrainConfig};
use tabxcheck::corpus::{self, GenConfig, SyntheticCorpus};
use tabxcheck::document::{self, pair, PairId};
use tabxcheck::embedder::{EmbedderConfig, MentionEmbedder, ProjectionEmbedder};
use tabxcheck::eval::evaluate_sets;
use tabxcheck::filter::{filter_candidates, FilterParams};
use tabxcheck::matrix::EmbeddingMatrix;
use tabxcheck::pipeline::run_pipeline;

fn err(e: tabxcheck::Error) -> PyErr {
    match e {
        tabxcheck::Error::BackendUnavailable { .. } | tabxcheck::Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Converts through JSON into Python dicts and lists.
fn to_py(py: Python<'_>, v: &impl Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

#[pyclass(name = "Document", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDocument(document::Document);

#[pymethods]
impl PyDocument {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        document::parse_document(text.as_bytes()).map(PyDocument).map_err(err)
    }

    fn to_json(&self) -> String {
        document::serialize_document(&self.0)
    }

    #[getter]
    fn doc_id(&self) -> String {
        self.0.doc_id.clone()
    }

    #[getter]
    fn table_ids(&self) -> Vec<String> {
        self.0.tables.iter().map(|t| t.table_id.clone()).collect()
    }

    fn mentions(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0.mentions())
    }

    /// Shared table context plus position statement.
    fn context(&self, mention_id: u32) -> PyResult<String> {
        self.0.build_context(mention_id).map(|c| c.text()).map_err(err)
    }

    #[pyo3(signature = (table_id, masked=false))]
    fn linearize(&self, table_id: &str, masked: bool) -> PyResult<String> {
        let t = self
            .0
            .table(table_id)
            .ok_or_else(|| PyValueError::new_err(format!("no table {table_id}")))?;
        Ok(if masked { t.linearize_masked(classifier::PLACEHOLDER) } else { t.linearize() })
    }

    fn __len__(&self) -> usize {
        self.0.mentions().len()
    }

    fn __repr__(&self) -> String {
        format!("Document({:?}, tables={}, mentions={})", self.0.doc_id, self.0.tables.len(), self.0.mentions().len())
    }
}

#[pyclass(name = "Corpus", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCorpus(SyntheticCorpus);

#[pymethods]
impl PyCorpus {
    /// Synthetic corpus; `inject` is the fraction of gold groups given a perturbed value.
    #[staticmethod]
    #[pyo3(signature = (n_docs=50, seed=42, inject=0.0))]
    fn generate(py: Python<'_>, n_docs: usize, seed: u64, inject: f64) -> PyResult<Self> {
        let cfg = GenConfig {
            n_docs,
            rng_seed: seed,
            inconsistency_rate: inject,
            ..GenConfig::default()
        };
        py.detach(|| corpus::generate_corpus(&cfg)).map(PyCorpus).map_err(err)
    }

    #[staticmethod]
    fn read_dir(path: PathBuf) -> PyResult<Self> {
        SyntheticCorpus::read_dir(&path).map(PyCorpus).map_err(err)
    }

    fn write_dir(&self, path: PathBuf) -> PyResult<()> {
        self.0.write_dir(&path).map_err(err)
    }

    fn inject(&self, rate: f64, seed: u64) -> Self {
        PyCorpus(corpus::inject_inconsistencies(&self.0, rate, seed))
    }

    #[getter]
    fn documents(&self) -> Vec<PyDocument> {
        self.0.documents.iter().cloned().map(PyDocument).collect()
    }

    /// `{doc_id: [[mention_id, ...], ...]}`
    fn gold(&self) -> BTreeMap<String, Vec<Vec<u32>>> {
        self.0.gold.iter().map(|g| (g.doc_id.clone(), g.groups.clone())).collect()
    }

    fn planted(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0.planted_inconsistencies)
    }

    fn __len__(&self) -> usize {
        self.0.documents.len()
    }
}

#[pyclass(name = "ProjectionEmbedder", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyEmbedder(ProjectionEmbedder);

#[pymethods]
impl PyEmbedder {
    #[new]
    #[pyo3(signature = (dim=64, feature_dim=2048, seed=7))]
    fn new(dim: usize, feature_dim: usize, seed: u64) -> Self {
        PyEmbedder(ProjectionEmbedder::random(&EmbedderConfig { dim, feature_dim, seed }))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ProjectionEmbedder::load(&path).map(PyEmbedder).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    /// `(mention_ids, rows)` with unit-norm rows.
    fn embed(&self, doc: &PyDocument) -> PyResult<(Vec<u32>, Vec<Vec<f32>>)> {
        let e = self.0.embed_document(&doc.0).map_err(err)?;
        Ok((e.ids().to_vec(), (0..e.len()).map(|i| e.row(i).to_vec()).collect()))
    }
}

#[pyfunction]
fn normalize_value(raw: &str) -> PyResult<String> {
    tabxcheck::normalize_value(raw).map(|v| v.to_string()).map_err(err)
}

/// Returns `(embedder, log)`; `log` holds one dict per step.
#[pyfunction]
#[pyo3(signature = (corpus, epochs=3, lr=2.0, objective="decoupled", seed=11, init=None))]
fn train_embedder(
    py: Python<'_>,
    corpus: &PyCorpus,
    epochs: usize,
    lr: f64,
    objective: &str,
    seed: u64,
    init: Option<&PyEmbedder>,
) -> PyResult<(PyEmbedder, Py<PyAny>)> {
    let cfg = TrainConfig {
        epochs,
        lr,
        seed,
        objective: objective.parse::<Objective>().map_err(err)?,
        ..TrainConfig::default()
    };
    let init = init.map_or_else(|| ProjectionEmbedder::random(&EmbedderConfig::default()), |e| e.0.clone());
    let out = py
        .detach(|| contrastive::train_embedder(&corpus.0, &init, &cfg, &LossParams::default()))
        .map_err(err)?;
    let log = to_py(py, &out.log)?;
    Ok((PyEmbedder(out.embedder), log))
}

fn batch(rows: Vec<Vec<f64>>, labels: Vec<Option<usize>>) -> PyResult<Batch> {
    Batch::from_labels(rows, &labels).map_err(err)
}

fn loss_params(tau: f64, alpha1: f64, alpha2: f64, epsilon: f64) -> PyResult<LossParams> {
    let p = LossParams {
        tau,
        alpha1,
        alpha2,
        epsilon,
    };
    p.validate().map_err(err)?;
    Ok(p)
}

/// Decoupled loss over rows labelled by group (`None` = isolated).
#[pyfunction]
#[pyo3(signature = (rows, labels, tau=0.15, alpha1=0.75, alpha2=0.25, epsilon=1e-4))]
fn decoupled_loss(
    py: Python<'_>,
    rows: Vec<Vec<f64>>,
    labels: Vec<Option<usize>>,
    tau: f64,
    alpha1: f64,
    alpha2: f64,
    epsilon: f64,
) -> PyResult<Py<PyAny>> {
    let (parts, grad) = contrastive::loss_and_gradient(&batch(rows, labels)?, &loss_params(tau, alpha1, alpha2, epsilon)?)
        .map_err(err)?;
    to_py(py, &serde_json::json!({"loss_n": parts.loss_n, "loss_i": parts.loss_i, "loss": parts.loss, "gradient": grad}))
}

#[pyfunction]
#[pyo3(signature = (rows, labels, tau=0.15))]
fn standard_infonce(rows: Vec<Vec<f64>>, labels: Vec<Option<usize>>, tau: f64) -> PyResult<f64> {
    let p = LossParams {
        tau,
        ..LossParams::default()
    };
    Ok(contrastive::standard_infonce(&batch(rows, labels)?, &p))
}

/// Pairs `(id_i, id_j, cosine)` with cosine above `threshold`.
#[pyfunction]
#[pyo3(signature = (ids, rows, threshold=0.5, exact=false))]
fn filter_pairs(ids: Vec<u32>, rows: Vec<Vec<f32>>, threshold: f64, exact: bool) -> PyResult<Vec<(u32, u32, f64)>> {
    if ids.len() != rows.len() {
        return Err(PyValueError::new_err("ids and rows differ in length"));
    }
    let dim = rows.first().map_or(1, Vec::len);
    let mut rows: Vec<(u32, Vec<f32>)> = ids.into_iter().zip(rows).collect();
    for (_, r) in rows.iter_mut() {
        tabxcheck::matrix::l2_normalize(r);
    }
    let e = EmbeddingMatrix::from_rows(dim, rows).map_err(err)?;
    let p = FilterParams {
        threshold,
        exact_mode: exact,
        ..FilterParams::default()
    };
    Ok(filter_candidates(&e, &p).map_err(err)?.iter().map(|((a, b), s)| (a, b, s)).collect())
}

#[pyfunction]
#[pyo3(signature = (doc, seed=0))]
fn greedy_path(py: Python<'_>, doc: &PyDocument, seed: u64) -> PyResult<Py<PyAny>> {
    to_py(py, &cnap::greedy_max_path(&cnap::build_graph(&doc.0), seed))
}

#[pyfunction]
fn reading_order_path(py: Python<'_>, doc: &PyDocument) -> PyResult<Py<PyAny>> {
    to_py(py, &cnap::reading_order_path(&doc.0))
}

#[pyfunction]
fn build_prompt(doc: &PyDocument, mention_i: u32, mention_j: u32) -> PyResult<String> {
    classifier::build_prompt(&doc.0, pair(mention_i, mention_j), &PromptTemplates::default())
        .map(|p| p.text())
        .map_err(err)
}

/// `"equivalent"`, `"not_equivalent"` or `"abstain"`.
#[pyfunction]
fn parse_decision(text: &str) -> &'static str {
    match classifier::parse_decision(text) {
        Decision::Equivalent => "equivalent",
        Decision::NotEquivalent => "not_equivalent",
        Decision::Abstain => "abstain",
    }
}

/// Full run; returns the metrics dict.
#[pyfunction]
#[pyo3(signature = (corpus, embedder, threshold=0.5, backend="oracle"))]
fn run(py: Python<'_>, corpus: &PyCorpus, embedder: &PyEmbedder, threshold: f64, backend: &str) -> PyResult<Py<PyAny>> {
    let mut cfg = RunConfig::default();
    cfg.filter.threshold = threshold;
    cfg.backend = backend.parse::<BackendConfig>().map_err(err)?;
    cfg.validate().map_err(err)?;
    let b = cfg.backend.instantiate(&corpus.0.gold);
    let out = py
        .detach(|| run_pipeline(&corpus.0, &embedder.0, b.as_ref(), &cfg))
        .map_err(err)?;
    to_py(py, &out.metrics)
}

/// Micro precision/recall/F1 of predicted pairs against gold pairs, keyed by document.
#[pyfunction]
fn evaluate(
    py: Python<'_>,
    gold: BTreeMap<String, Vec<(u32, u32)>>,
    predicted: BTreeMap<String, Vec<(u32, u32)>>,
) -> PyResult<Py<PyAny>> {
    let canon = |m: BTreeMap<String, Vec<(u32, u32)>>| -> BTreeMap<String, BTreeSet<PairId>> {
        m.into_iter()
            .map(|(k, v)| (k, v.into_iter().map(|(a, b)| pair(a, b)).collect()))
            .collect()
    };
    to_py(py, &evaluate_sets(&canon(gold), &canon(predicted)).map_err(err)?)
}

#[pymodule]
pub fn tabxcheck_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDocument>()?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyEmbedder>()?;
    m.add_function(wrap_pyfunction!(normalize_value, m)?)?;
    m.add_function(wrap_pyfunction!(train_embedder, m)?)?;
    m.add_function(wrap_pyfunction!(decoupled_loss, m)?)?;
    m.add_function(wrap_pyfunction!(standard_infonce, m)?)?;
    m.add_function(wrap_pyfunction!(filter_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(greedy_path, m)?)?;
    m.add_function(wrap_pyfunction!(reading_order_path, m)?)?;
    m.add_function(wrap_pyfunction!(build_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(parse_decision, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
