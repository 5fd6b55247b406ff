//! Python bindings: metrics, featurization helpers, the run commands and
//! trained-model scoring.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::IntoPyObjectExt;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

use trigin_core::artifact::ModelFile;
use trigin_core::cli::{self, RunConfig};
use trigin_core::featurize::TfidfVocabulary;
use trigin_core::io::{read_enterprises, read_texts_for, DatasetPaths};
use trigin_core::numcore::Matrix;
use trigin_core::pipeline::Dataset;
use trigin_core::{eval, graph, Error};

create_exception!(trigin, TriginError, PyException);

fn py_err(e: Error) -> PyErr {
    TriginError::new_err(format!("{}: {e}", e.category()))
}

fn json_to_py(py: Python<'_>, v: &Value) -> PyResult<Py<PyAny>> {
    Ok(match v {
        Value::Null => py.None(),
        Value::Bool(b) => b.into_py_any(py)?,
        Value::Number(n) => match (n.as_u64(), n.as_i64()) {
            (Some(u), _) => u.into_py_any(py)?,
            (None, Some(i)) => i.into_py_any(py)?,
            _ => n.as_f64().unwrap_or(f64::NAN).into_py_any(py)?,
        },
        Value::String(s) => s.into_py_any(py)?,
        Value::Array(xs) => {
            let items = xs.iter().map(|x| json_to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any().unbind()
        }
        Value::Object(map) => {
            let d = PyDict::new(py);
            for (k, x) in map {
                d.set_item(k, json_to_py(py, x)?)?;
            }
            d.into_any().unbind()
        }
    })
}

fn to_py(py: Python<'_>, value: serde_json::Result<Value>) -> PyResult<Py<PyAny>> {
    json_to_py(py, &value.map_err(|e| py_err(e.into()))?)
}

/// Exact Mann–Whitney ROC AUC.
#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<f64>) -> PyResult<f64> {
    eval::roc_auc(&scores, &labels).map_err(py_err)
}

/// `(precision, recall, f1)` for the positive class.
#[pyfunction]
#[pyo3(signature = (scores, labels, threshold = eval::DEFAULT_THRESHOLD))]
fn prf1(scores: Vec<f64>, labels: Vec<f64>, threshold: f64) -> PyResult<(f64, f64, f64)> {
    let m = eval::prf1(&scores, &labels, threshold).map_err(py_err)?;
    Ok((m.precision, m.recall, m.f1))
}

/// `(fpr, tpr)` vertices of the ROC curve.
#[pyfunction]
fn roc_points(scores: Vec<f64>, labels: Vec<f64>) -> PyResult<Vec<(f64, f64)>> {
    eval::roc_points(&scores, &labels).map_err(py_err)
}

/// Neighbor lists of the symmetric cosine k-NN graph over the given rows.
#[pyfunction]
#[pyo3(signature = (profiles, k = graph::DEFAULT_K))]
fn knn_graph(profiles: Vec<Vec<f64>>, k: usize) -> PyResult<Vec<Vec<usize>>> {
    let m = Matrix::from_rows(&profiles).map_err(py_err)?;
    let g = graph::build_knn_graph(&m, k).map_err(py_err)?;
    Ok(g.neighbor_lists().to_vec())
}

/// Fits a TF-IDF vocabulary on `corpus` and returns `(terms, rows)`.
#[pyfunction]
#[pyo3(signature = (corpus, max_features = 1000, min_df = 1))]
fn tfidf(corpus: Vec<Vec<String>>, max_features: usize, min_df: usize) -> PyResult<(Vec<String>, Vec<Vec<f64>>)> {
    let vocab = TfidfVocabulary::fit(&corpus, max_features, min_df).map_err(py_err)?;
    let m = vocab.transform(&corpus).map_err(py_err)?;
    let rows = (0..m.rows()).map(|i| m.row(i).to_vec()).collect();
    Ok((vocab.terms, rows))
}

fn parse_config(config: Option<&str>) -> PyResult<RunConfig> {
    match config {
        Some(text) => RunConfig::from_toml(text).map_err(py_err),
        None => Ok(RunConfig::default()),
    }
}

/// Default run configuration as TOML.
#[pyfunction]
fn default_config() -> String {
    RunConfig::default().to_toml()
}

/// Writes a synthetic dataset; returns the output directory.
#[pyfunction]
#[pyo3(signature = (config = None))]
fn gen_data(config: Option<&str>) -> PyResult<String> {
    let dir = cli::cmd_gen_data(&parse_config(config)?).map_err(py_err)?;
    Ok(dir.display().to_string())
}

#[pyfunction]
#[pyo3(signature = (config = None))]
fn train(py: Python<'_>, config: Option<&str>) -> PyResult<Py<PyAny>> {
    let s = cli::cmd_train(&parse_config(config)?).map_err(py_err)?;
    to_py(py, serde_json::to_value(&s))
}

#[pyfunction]
#[pyo3(signature = (config = None))]
fn evaluate(py: Python<'_>, config: Option<&str>) -> PyResult<Py<PyAny>> {
    let r = cli::cmd_evaluate(&parse_config(config)?).map_err(py_err)?;
    to_py(py, serde_json::to_value(&r))
}

/// Runs the experiment grid; returns the per-configuration summaries.
#[pyfunction]
#[pyo3(signature = (config = None))]
fn ablate(py: Python<'_>, config: Option<&str>) -> PyResult<Py<PyAny>> {
    let r = cli::cmd_ablate(&parse_config(config)?).map_err(py_err)?;
    to_py(py, serde_json::to_value(&r.result.summary))
}

/// A trained model loaded from `model.json`.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    file: ModelFile,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            file: ModelFile::load(&path).map_err(py_err)?,
        })
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.file.spec.variant.key()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.file.meta.seed
    }

    #[getter]
    fn config_hash(&self) -> String {
        self.file.meta.config_hash.clone()
    }

    fn parameter_names(&self) -> Vec<String> {
        self.file.params.iter().map(|p| p.name.clone()).collect()
    }

    /// Scores the rows of `enterprises` (and `texts` when the variant reads
    /// text). Returns `(ids, probabilities, alphas)`; `alphas` is empty for
    /// variants without attention.
    #[pyo3(signature = (enterprises, texts = None))]
    #[allow(clippy::type_complexity)]
    fn predict(&self, enterprises: PathBuf, texts: Option<PathBuf>) -> PyResult<(Vec<String>, Vec<f64>, Vec<Vec<f64>>)> {
        let records = read_enterprises(&enterprises).map_err(py_err)?;
        let texts = texts
            .map(|p| read_texts_for(&p, &records))
            .transpose()
            .map_err(py_err)?;
        let data = Dataset {
            labels: vec![0.0; records.len()],
            records,
            texts,
        };
        let pred = cli::score(&self.file, &data).map_err(py_err)?;
        let alphas = pred
            .alpha
            .map(|a| (0..a.rows()).map(|i| a.row(i).to_vec()).collect())
            .unwrap_or_default();
        Ok((data.records.into_iter().map(|r| r.id).collect(), pred.probabilities, alphas))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(variant={:?}, seed={}, parameters={})",
            self.variant(),
            self.seed(),
            self.file.params.len()
        )
    }
}

/// Paths of the three dataset files in `dir`.
#[pyfunction]
fn dataset_files(dir: PathBuf) -> (String, String, String) {
    let p = DatasetPaths::in_dir(&dir);
    let s = |p: PathBuf| p.display().to_string();
    (s(p.enterprises), s(p.texts), s(p.labels))
}

/// Triple-channel GIN for enterprise financial-risk classification.
#[pymodule(name = "trigin")]
fn trigin(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("TriginError", m.py().get_type::<TriginError>())?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(prf1, m)?)?;
    m.add_function(wrap_pyfunction!(roc_points, m)?)?;
    m.add_function(wrap_pyfunction!(knn_graph, m)?)?;
    m.add_function(wrap_pyfunction!(tfidf, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(gen_data, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(ablate, m)?)?;
    m.add_function(wrap_pyfunction!(dataset_files, m)?)?;
    Ok(())
}
