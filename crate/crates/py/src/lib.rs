//! Python bindings: configuration, datasets, checkpoints, the training and
//! evaluation stages, and the evaluation metrics.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyArithmeticError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;
use serde::Serialize;
use serde_json::Value;

use physiome::app::{self, CheckpointBundle, FoldEval, RunConfig, Stage};
use physiome::evalkit::{self, SweepReport};
use physiome::physiome::{Placeholder, RestorationStrategy};
use physiome::signal::{self, ModalityBatch};
use physiome::Error;

create_exception!(physiome_py, StageError, PyRuntimeError, "A checkpoint from the wrong pipeline stage.");

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => io.into(),
        e @ Error::Stage { .. } => StageError::new_err(e.to_string()),
        e @ Error::Numeric(_) => PyArithmeticError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    match v {
        Value::Null => Ok(py.None().into_bound(py)),
        Value::Bool(b) => b.into_bound_py_any(py),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_bound_py_any(py),
            (None, Some(u)) => u.into_bound_py_any(py),
            _ => n.as_f64().unwrap_or(f64::NAN).into_bound_py_any(py),
        },
        Value::String(s) => s.into_bound_py_any(py),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for x in items {
                list.append(json_to_py(py, x)?)?;
            }
            Ok(list.into_any())
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, x) in map {
                dict.set_item(k, json_to_py(py, x)?)?;
            }
            Ok(dict.into_any())
        }
    }
}

/// Any serializable value as plain Python dicts, lists and scalars.
fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let value = serde_json::to_value(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &value)
}

fn parse_strategy(cfg: &RunConfig, s: Option<&str>) -> PyResult<RestorationStrategy> {
    s.map_or(Ok(cfg.eval.strategy), |s| s.parse().map_err(py_err))
}

/// A run configuration: a preset or a TOML file layered over one.
#[pyclass(name = "Config", module = "physiome_py", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    /// One of the built-in presets: synthetic, sleep, vital.
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        Ok(Self { inner: RunConfig::preset(name).map_err(py_err)? })
    }

    /// A preset name or a TOML file path.
    #[staticmethod]
    fn load(spec: &str) -> PyResult<Self> {
        Ok(Self { inner: RunConfig::load(spec).map_err(py_err)? })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self { inner: RunConfig::from_toml(text).map_err(py_err)? })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    /// Run seed. Setting it also reseeds the synthetic data generator.
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
        self.inner.data.synthetic.seed = seed;
    }

    #[getter]
    fn n_modalities(&self) -> usize {
        self.inner.n_modalities()
    }

    #[getter]
    fn modality_names(&self) -> Vec<String> {
        self.inner.data.modality_names.clone()
    }

    #[getter]
    fn placeholder(&self) -> &'static str {
        self.inner.physiome.placeholder.as_str()
    }

    /// A copy training PhysioME with `mask_token` or `memory_token` placeholders.
    fn with_placeholder(&self, placeholder: &str) -> PyResult<Self> {
        let p: Placeholder =
            serde_json::from_value(Value::String(placeholder.into())).map_err(|_| PyValueError::new_err(format!("unknown placeholder {placeholder:?}")))?;
        Ok(Self { inner: self.inner.with_placeholder(p) })
    }

    fn __repr__(&self) -> String {
        format!("Config(preset={:?}, seed={})", self.inner.preset, self.inner.seed)
    }
}

/// Labelled multimodal windows grouped by subject.
#[pyclass(name = "Dataset", module = "physiome_py")]
struct PyDataset {
    inner: ModalityBatch,
}

#[pymethods]
impl PyDataset {
    /// Synthetic data from the configuration's generator settings.
    #[staticmethod]
    fn generate(py: Python<'_>, config: &PyConfig) -> PyResult<Self> {
        let cfg = &config.inner.data.synthetic;
        let inner = py.detach(|| signal::generate_synthetic_dataset(cfg)).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: signal::read_dataset(path).map_err(py_err)? })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        signal::write_dataset(path, &self.inner).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn n_modalities(&self) -> usize {
        self.inner.n_modalities()
    }

    #[getter]
    fn labels(&self) -> Vec<Option<usize>> {
        self.inner.labels().to_vec()
    }

    /// Sorted distinct subject ids.
    #[getter]
    fn subjects(&self) -> Vec<String> {
        self.inner.subjects()
    }

    fn subject(&self, row: usize) -> PyResult<String> {
        if row >= self.inner.len() {
            return Err(PyValueError::new_err(format!("row {row} out of range")));
        }
        Ok(self.inner.subject(row).to_string())
    }

    /// Samples of one window, or None where the modality is missing.
    fn signal(&self, row: usize, modality: usize) -> PyResult<Option<Vec<f64>>> {
        if row >= self.inner.len() || modality >= self.inner.n_modalities() {
            return Err(PyValueError::new_err(format!("no window at row {row}, modality {modality}")));
        }
        Ok(self.inner.window(row, modality).map(|w| w.samples.clone()))
    }

    fn __repr__(&self) -> String {
        format!("Dataset({} rows x {} modalities)", self.inner.len(), self.inner.n_modalities())
    }
}

/// Trained parameters tagged with the stage, fold and configuration that produced them.
#[pyclass(name = "Checkpoint", module = "physiome_py")]
struct PyCheckpoint {
    inner: CheckpointBundle,
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: CheckpointBundle::load(path).map_err(py_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    #[getter]
    fn stage(&self) -> &'static str {
        self.inner.stage.as_str()
    }

    #[getter]
    fn fold(&self) -> usize {
        self.inner.fold
    }

    #[getter]
    fn config(&self) -> PyConfig {
        PyConfig { inner: self.inner.config.clone() }
    }

    /// SHA-256 of the serialized checkpoint.
    fn digest(&self) -> String {
        self.inner.digest()
    }

    fn parameter_names(&self) -> Vec<String> {
        self.inner.params.names().cloned().collect()
    }

    fn __repr__(&self) -> String {
        format!("Checkpoint(stage={}, fold={})", self.inner.stage, self.inner.fold)
    }
}

/// Scores under every evaluated scenario with deltas to the full-modality row.
#[pyclass(name = "Sweep", module = "physiome_py")]
struct PySweep {
    inner: SweepReport,
}

#[pymethods]
impl PySweep {
    #[getter]
    fn strategy(&self) -> String {
        self.inner.strategy.to_string()
    }

    #[getter]
    fn rows<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.rows)
    }

    #[getter]
    fn mav<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.mav)
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    fn to_markdown(&self) -> String {
        self.inner.to_markdown()
    }
}

/// Pretrains one dual-path backbone per modality on the fold's pretraining
/// subjects. Returns the checkpoint and per-epoch losses.
#[pyfunction]
#[pyo3(signature = (config, dataset, fold = 0))]
fn pretrain_backbone<'py>(
    py: Python<'py>,
    config: &PyConfig,
    dataset: &PyDataset,
    fold: usize,
) -> PyResult<(PyCheckpoint, Bound<'py, PyAny>)> {
    let cfg = &config.inner;
    let ds = dataset.inner.clone();
    let (bundle, epochs) = py
        .detach(|| {
            let prep = app::prepare(ds, cfg)?;
            app::backbone_stage(&prep, cfg, fold)
        })
        .map_err(py_err)?;
    Ok((PyCheckpoint { inner: bundle }, to_py(py, &epochs)?))
}

/// Trains PhysioME on top of a backbone checkpoint.
#[pyfunction]
fn pretrain_physiome<'py>(
    py: Python<'py>,
    config: &PyConfig,
    dataset: &PyDataset,
    backbone: &PyCheckpoint,
) -> PyResult<(PyCheckpoint, Bound<'py, PyAny>)> {
    backbone.inner.expect_stage(Stage::DpNeuronet).map_err(py_err)?;
    let cfg = &config.inner;
    let ds = dataset.inner.clone();
    let backbone = &backbone.inner;
    let (bundle, epochs) = py
        .detach(|| {
            let prep = app::prepare(ds, cfg)?;
            app::physiome_stage(&prep, cfg, backbone)
        })
        .map_err(py_err)?;
    Ok((PyCheckpoint { inner: bundle }, to_py(py, &epochs)?))
}

/// Fits a linear probe on frozen features of a PhysioME checkpoint and scores
/// the given scenario (observed modalities as a bit string; all by default).
#[pyfunction]
#[pyo3(signature = (config, dataset, checkpoint, modalities = None, strategy = None))]
fn linear_eval<'py>(
    py: Python<'py>,
    config: &PyConfig,
    dataset: &PyDataset,
    checkpoint: &PyCheckpoint,
    modalities: Option<String>,
    strategy: Option<&str>,
) -> PyResult<(PyCheckpoint, Bound<'py, PyAny>)> {
    let physiome = &checkpoint.inner;
    physiome.expect_stage(Stage::Physiome).map_err(py_err)?;
    let cfg = config.inner.with_placeholder(physiome.config.physiome.placeholder);
    let strategy = parse_strategy(&cfg, strategy)?;
    let ds = dataset.inner.clone();
    let (head, scores) = py
        .detach(|| {
            let prep = app::prepare(ds, &cfg)?;
            let m = cfg.n_modalities();
            let bits = modalities.unwrap_or_else(|| "1".repeat(m));
            let list = app::scenarios(m, Some(&bits))?;
            FoldEval::new(&prep, &cfg, physiome)?.linear_eval(&cfg, prep.n_classes, &list, strategy)
        })
        .map_err(py_err)?;
    Ok((PyCheckpoint { inner: head }, to_py(py, &scores)?))
}

/// Linear evaluation under every missing-modality scenario, averaged over one
/// PhysioME checkpoint per fold.
#[pyfunction]
#[pyo3(signature = (config, dataset, checkpoints, modalities = None, strategy = None))]
fn sweep(
    py: Python<'_>,
    config: &PyConfig,
    dataset: &PyDataset,
    checkpoints: Vec<Bound<'_, PyCheckpoint>>,
    modalities: Option<String>,
    strategy: Option<&str>,
) -> PyResult<PySweep> {
    let cfg = &config.inner;
    let strategy = parse_strategy(cfg, strategy)?;
    let bundles: Vec<CheckpointBundle> = checkpoints.iter().map(|c| c.borrow().inner.clone()).collect();
    for b in &bundles {
        b.expect_stage(Stage::Physiome).map_err(py_err)?;
    }
    let ds = dataset.inner.clone();
    let inner = py
        .detach(|| {
            let prep = app::prepare(ds, cfg)?;
            let list = app::scenarios(cfg.n_modalities(), modalities.as_deref())?;
            let per_fold = bundles
                .iter()
                .map(|b| {
                    let cfg = cfg.with_placeholder(b.config.physiome.placeholder);
                    Ok(FoldEval::new(&prep, &cfg, b)?.linear_eval(&cfg, prep.n_classes, &list, strategy)?.1)
                })
                .collect::<physiome::Result<Vec<_>>>()?;
            SweepReport::from_folds(cfg.data.modality_names.clone(), strategy, &per_fold)
        })
        .map_err(py_err)?;
    Ok(PySweep { inner })
}

/// Every stage end to end, writing artifacts under `out`. Returns the run summary.
#[pyfunction]
fn run_pipeline<'py>(py: Python<'py>, config: &PyConfig, out: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let cfg = &config.inner;
    let summary = py.detach(|| app::run_pipeline(cfg, &out)).map_err(py_err)?;
    to_py(py, &summary)
}

/// Rank AUC of scores against binary labels, ties counting one half.
#[pyfunction]
fn binary_auc(scores: Vec<f64>, positive: Vec<bool>) -> PyResult<f64> {
    evalkit::binary_auc(&scores, &positive).map_err(py_err)
}

#[pyfunction]
fn accuracy(preds: Vec<usize>, labels: Vec<usize>) -> PyResult<f64> {
    evalkit::accuracy(&preds, &labels).map_err(py_err)
}

/// Subject-level cross-validation plan over the distinct ids in `subjects`.
#[pyfunction]
fn make_folds<'py>(py: Python<'py>, subjects: Vec<String>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &evalkit::make_folds(&subjects, seed).map_err(py_err)?)
}

#[pymodule]
fn physiome_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    app::configure_threads();
    m.add("StageError", m.py().get_type::<StageError>())?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_class::<PySweep>()?;
    m.add_function(wrap_pyfunction!(pretrain_backbone, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain_physiome, m)?)?;
    m.add_function(wrap_pyfunction!(linear_eval, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(binary_auc, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(make_folds, m)?)?;
    Ok(())
}
