//! Python module `cwkd`: tensors, distillation losses, the toy network and
//! the training entry points.
//!
//! Tensors cross the boundary as a shape tuple plus a flat row-major list, so
//! `numpy.asarray(t.tolist()).reshape(t.shape)` recovers an array.

use std::path::PathBuf;

use cwkd_core::gradcheck::{check_all_losses_n, check_network, default_shapes};
use cwkd_core::losses::{ChannelDistribution, LossKind, LossSpec, Target};
use cwkd_core::models::{ToyNet, IN_CHANNELS};
use cwkd_core::trainer::{self, ExperimentConfig, RunOptions};
use cwkd_core::{data, dump, Error, LabelMap, Shape4, Tensor4};
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Format { .. } => PyIOError::new_err(e.to_string()),
        Error::Diverged { .. } => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for cwkd_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

/// Dense `(n, c, h, w)` float64 tensor.
#[pyclass(name = "Tensor", module = "cwkd")]
pub struct PyTensor {
    inner: Tensor4,
}

impl From<Tensor4> for PyTensor {
    fn from(inner: Tensor4) -> Self {
        Self { inner }
    }
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: (usize, usize, usize, usize), data: Vec<f64>) -> PyResult<Self> {
        let (n, c, h, w) = shape;
        Ok(Tensor4::from_vec(Shape4::new(n, c, h, w), data).py()?.into())
    }

    #[staticmethod]
    fn zeros(shape: (usize, usize, usize, usize)) -> Self {
        let (n, c, h, w) = shape;
        Tensor4::zeros(Shape4::new(n, c, h, w)).into()
    }

    /// Read a CWT1 dump.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(dump::read(&path).py()?.into())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        dump::write(&path, &self.inner).py()
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize, usize) {
        let [n, c, h, w] = self.inner.shape().dims();
        (n, c, h, w)
    }

    fn tolist(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn get(&self, n: usize, c: usize, y: usize, x: usize) -> PyResult<f64> {
        let [sn, sc, sh, sw] = self.inner.shape().dims();
        if n >= sn || c >= sc || y >= sh || x >= sw {
            return Err(pyo3::exceptions::PyIndexError::new_err("index out of range"));
        }
        Ok(self.inner.get(n, c, y, x))
    }

    fn __len__(&self) -> usize {
        self.inner.data().len()
    }

    fn __repr__(&self) -> String {
        format!("Tensor{:?}", self.shape())
    }
}

/// Per-pixel class labels of shape `(n, h, w)`.
#[pyclass(name = "Labels", module = "cwkd")]
pub struct PyLabels {
    inner: LabelMap,
}

#[pymethods]
impl PyLabels {
    /// Label value excluded from losses and metrics.
    #[classattr]
    const IGNORE: u32 = LabelMap::IGNORE;

    #[new]
    fn new(shape: (usize, usize, usize), data: Vec<u32>) -> PyResult<Self> {
        let (n, h, w) = shape;
        Ok(Self {
            inner: LabelMap::new(n, h, w, data).py()?,
        })
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        self.inner.dims()
    }

    fn tolist(&self) -> Vec<u32> {
        self.inner.data().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Labels{:?}", self.inner.dims())
    }
}

/// One loss term. Omitted fields take the library defaults for `kind`.
#[pyclass(name = "LossSpec", module = "cwkd")]
pub struct PyLossSpec {
    inner: LossSpec,
}

#[pymethods]
impl PyLossSpec {
    #[new]
    #[pyo3(signature = (kind, target=None, alpha=None, temperature=None, p=None))]
    fn new(kind: &str, target: Option<&str>, alpha: Option<f64>, temperature: Option<f64>, p: Option<f64>) -> PyResult<Self> {
        let mut spec = LossSpec::new(kind.parse::<LossKind>().py()?);
        if let Some(t) = target {
            spec = spec.with_target(t.parse::<Target>().py()?);
        }
        if let Some(a) = alpha {
            spec = spec.with_alpha(a);
        }
        if let Some(t) = temperature {
            spec = spec.with_temperature(t);
        }
        if let Some(p) = p {
            spec.p = p;
        }
        spec.validate().py()?;
        Ok(Self { inner: spec })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.name()
    }

    #[getter]
    fn target(&self) -> String {
        self.inner.target.to_string()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[getter]
    fn temperature(&self) -> f64 {
        self.inner.temperature
    }

    #[getter]
    fn p(&self) -> f64 {
        self.inner.p
    }

    fn label(&self) -> String {
        self.inner.label()
    }

    /// Unweighted loss value and its gradient with respect to `student`.
    #[pyo3(signature = (teacher, student, labels=None))]
    fn evaluate(&self, teacher: &PyTensor, student: &PyTensor, labels: Option<&PyLabels>) -> PyResult<(f64, PyTensor)> {
        let r = self.inner.evaluate(&teacher.inner, &student.inner, labels.map(|l| &l.inner)).py()?;
        Ok((r.value, r.grad_student.into()))
    }

    fn __repr__(&self) -> String {
        format!("LossSpec({}, alpha={}, T={})", self.inner.label(), self.inner.alpha, self.inner.temperature)
    }
}

/// Experiment description; see the TOML layout in the Rust docs.
#[pyclass(name = "Config", module = "cwkd")]
pub struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        Self {
            inner: ExperimentConfig::default(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::from_toml(text).py()?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    /// Copy with the distillation terms replaced by `losses`.
    fn with_losses(&self, losses: Vec<PyRef<'_, PyLossSpec>>) -> Self {
        let specs: Vec<LossSpec> = losses.iter().map(|s| s.inner).collect();
        Self {
            inner: self.inner.with_terms(&specs),
        }
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.seeds.clone()
    }
}

/// Synthetic scenes with per-pixel labels.
#[pyclass(name = "Dataset", module = "cwkd")]
pub struct PyDataset {
    inner: data::Dataset,
}

#[pymethods]
impl PyDataset {
    /// `count` scenes of `height × width` pixels drawn from `seed`.
    #[staticmethod]
    #[pyo3(signature = (seed, count, height=32, width=32, classes=4))]
    fn generate(seed: u64, count: usize, height: usize, width: usize, classes: usize) -> PyResult<Self> {
        Ok(Self {
            inner: data::generate(seed, count, height, width, classes).py()?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn batch(&self, indices: Vec<usize>) -> PyResult<(PyTensor, PyLabels)> {
        let (x, y) = self.inner.batch(&indices).py()?;
        Ok((x.into(), PyLabels { inner: y }))
    }

    fn class_histogram(&self) -> Vec<usize> {
        self.inner.class_histogram()
    }
}

/// The conv-relu-conv-relu-1×1 segmentation network.
#[pyclass(name = "ToyNet", module = "cwkd")]
pub struct PyToyNet {
    inner: ToyNet,
}

#[pymethods]
impl PyToyNet {
    #[staticmethod]
    fn from_seed(seed: u64, width: usize, classes: usize) -> Self {
        Self {
            inner: ToyNet::from_seed(seed, width, classes),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ToyNet::load(&path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.classes
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// `(feature, score)` activations for `images` of shape `(n, 3, h, w)`.
    fn taps(&self, images: &PyTensor) -> PyResult<(PyTensor, PyTensor)> {
        let t = self.inner.taps(&images.inner).py()?;
        Ok((t.feature.into(), t.score.into()))
    }

    /// Validation mIoU on `dataset`.
    fn evaluate(&self, dataset: &PyDataset) -> PyResult<f64> {
        trainer::evaluate(&self.inner, &dataset.inner).py()
    }
}

/// Best network and scores of one training run.
#[pyclass(name = "RunResult", module = "cwkd", get_all)]
pub struct PyRunResult {
    best_val_miou: f64,
    final_val_miou: f64,
    best_step: usize,
    seed: u64,
    net: Py<PyToyNet>,
}

fn run_result(py: Python<'_>, out: trainer::RunOutcome) -> PyResult<PyRunResult> {
    Ok(PyRunResult {
        best_val_miou: out.best_val_miou,
        final_val_miou: out.final_val_miou,
        best_step: out.best_step,
        seed: out.seed,
        net: Py::new(py, PyToyNet { inner: out.best })?,
    })
}

/// Spatial softmax of every `(n, c)` slice at `temperature`.
#[pyfunction]
#[pyo3(signature = (x, temperature=1.0))]
fn channel_distribution(x: &PyTensor, temperature: f64) -> PyResult<PyTensor> {
    Ok(ChannelDistribution::from_logits(&x.inner, temperature).py()?.into_tensor().into())
}

/// `(term, value)` leading-order cost of a loss kind.
#[pyfunction]
#[pyo3(signature = (kind, h, w, c, n, p=2))]
fn complexity(kind: &str, h: u64, w: u64, c: u64, n: u64, p: u32) -> PyResult<(String, u128)> {
    let r = cwkd_core::metrics::complexity_by_name(kind, h, w, c, n, p).py()?;
    Ok((r.term, r.value))
}

/// Worst relative error per kernel (and the network) against finite
/// differences, plus an overall `passed` flag.
#[pyfunction]
#[pyo3(signature = (seed=0, instances=20, tolerance=1e-4))]
fn gradcheck<'py>(py: Python<'py>, seed: u64, instances: usize, tolerance: f64) -> PyResult<Bound<'py, PyDict>> {
    let (report, net) = py.detach(|| -> cwkd_core::Result<_> {
        Ok((
            check_all_losses_n(seed, &default_shapes(), instances, tolerance)?,
            check_network(seed, 4, 3, Shape4::new(2, IN_CHANNELS, 5, 6), instances, tolerance)?,
        ))
    })
    .py()?;
    let out = PyDict::new(py);
    let errors = PyDict::new(py);
    for e in report.entries.iter().chain([&net]) {
        errors.set_item(&e.name, e.max_rel_error)?;
    }
    out.set_item("max_rel_error", errors)?;
    out.set_item("passed", report.passed && net.pass)?;
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (config, seed=0))]
fn train_teacher(py: Python<'_>, config: &PyConfig, seed: u64) -> PyResult<PyRunResult> {
    let cfg = &config.inner;
    let out = py
        .detach(|| {
            let splits = trainer::build_dataset(&cfg.dataset)?;
            trainer::train_teacher(cfg, &splits, seed, &RunOptions::default())
        })
        .py()?;
    run_result(py, out)
}

/// Train a student under `config`'s loss terms with `teacher` frozen.
#[pyfunction]
#[pyo3(signature = (config, teacher, seed=0))]
fn distill(py: Python<'_>, config: &PyConfig, teacher: &PyToyNet, seed: u64) -> PyResult<PyRunResult> {
    let cfg = &config.inner;
    let net = &teacher.inner;
    let out = py
        .detach(|| {
            let splits = trainer::build_dataset(&cfg.dataset)?;
            trainer::distill(cfg, net, &splits, seed, &RunOptions::default())
        })
        .py()?;
    run_result(py, out)
}

/// `(train, val)` splits described by `config`.
#[pyfunction]
fn build_dataset(config: &PyConfig) -> PyResult<(PyDataset, PyDataset)> {
    let s = trainer::build_dataset(&config.inner.dataset).py()?;
    Ok((PyDataset { inner: s.train }, PyDataset { inner: s.val }))
}

#[pymodule]
fn cwkd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", cwkd_core::VERSION)?;
    m.add("KINDS", LossKind::DISTILLATION.map(LossKind::name).to_vec())?;
    m.add_class::<PyTensor>()?;
    m.add_class::<PyLabels>()?;
    m.add_class::<PyLossSpec>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyToyNet>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(channel_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(complexity, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(train_teacher, m)?)?;
    m.add_function(wrap_pyfunction!(distill, m)?)?;
    m.add_function(wrap_pyfunction!(build_dataset, m)?)?;
    Ok(())
}
