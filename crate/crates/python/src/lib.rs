//! Python bindings. Structured results cross the boundary as plain dicts
//! and lists.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use mtlkit::data::{split_indices, synth_generate, SynthSpec, WindowedDataset};
use mtlkit::distill;
use mtlkit::harness::{self, ComparisonTable, ExperimentConfig};
use mtlkit::metrics;
use mtlkit::model::{param_count, predict_logits, MtlNet, MtlNetConfig};
use mtlkit::nn::ParamStore;
use mtlkit::tensor::{Tape, Tensor};
use mtlkit::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Tensor", module = "mtlkit_py")]
struct PyTensor {
    inner: Tensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f32>) -> PyResult<Self> {
        Ok(PyTensor {
            inner: Tensor::new(shape, data).map_err(err)?,
        })
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> Self {
        PyTensor {
            inner: Tensor::zeros(&shape),
        }
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    fn numel(&self) -> usize {
        self.inner.numel()
    }

    /// Flat row-major values.
    fn tolist(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn reshape(&self, shape: Vec<usize>) -> PyResult<Self> {
        Ok(PyTensor {
            inner: self.inner.reshape(&shape).map_err(err)?,
        })
    }

    fn argmax_rows(&self) -> PyResult<Vec<usize>> {
        self.inner.argmax_rows().map_err(err)
    }

    fn matmul(&self, other: PyRef<'_, PyTensor>) -> PyResult<Self> {
        let mut tape = Tape::no_grad();
        let a = tape.constant(self.inner.clone());
        let b = tape.constant(other.inner.clone());
        let c = tape.matmul(a, b).map_err(err)?;
        Ok(PyTensor {
            inner: tape.value(c).clone(),
        })
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

#[pyfunction]
fn softened_probs(z: PyRef<'_, PyTensor>, tau: f64) -> PyResult<PyTensor> {
    Ok(PyTensor {
        inner: distill::softened_probs(&z.inner, tau).map_err(err)?,
    })
}

/// Temperature-scaled KL(teacher || student), τ²-weighted, batch mean.
#[pyfunction]
#[pyo3(signature = (teacher, student, tau = 3.0))]
fn kd_loss(teacher: PyRef<'_, PyTensor>, student: PyRef<'_, PyTensor>, tau: f64) -> PyResult<f32> {
    distill::kd_loss(&teacher.inner, &student.inner, tau).map_err(err)
}

#[pyfunction]
fn cross_entropy(z: PyRef<'_, PyTensor>, y: Vec<usize>) -> PyResult<f32> {
    distill::cross_entropy(&z.inner, &y).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (ce, distill, lam = 0.5))]
fn born_again_total(ce: f32, distill: f32, lam: f64) -> PyResult<f32> {
    distill::born_again_total(ce, distill, lam).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (ce1, kd1, ce2, kd2, alpha = 0.5, lam = 0.5))]
fn smooth_total(ce1: f32, kd1: f32, ce2: f32, kd2: f32, alpha: f64, lam: f64) -> PyResult<f32> {
    distill::smooth_total(ce1, kd1, ce2, kd2, alpha, lam).map_err(err)
}

#[pyclass(name = "Dataset", module = "mtlkit_py")]
struct PyDataset {
    inner: WindowedDataset,
}

#[pymethods]
impl PyDataset {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn seq_len(&self) -> usize {
        self.inner.seq_len()
    }

    #[getter]
    fn labels1(&self) -> Vec<usize> {
        self.inner.y1.clone()
    }

    #[getter]
    fn labels2(&self) -> Vec<usize> {
        self.inner.y2.clone()
    }

    #[getter]
    fn classes(&self) -> (Vec<String>, Vec<String>) {
        (self.inner.classes1.clone(), self.inner.classes2.clone())
    }

    /// All windows as an `N×1×3×L` tensor.
    fn windows(&self) -> PyTensor {
        PyTensor {
            inner: self.inner.windows.clone(),
        }
    }
}

#[pyfunction]
#[pyo3(signature = (n_per_class = 10, c1 = 4, c2 = 3, seq_len = 100, seed = 0, difficulty = 0.0))]
fn synth(n_per_class: usize, c1: usize, c2: usize, seq_len: usize, seed: u64, difficulty: f64) -> PyResult<PyDataset> {
    let spec = SynthSpec {
        n_per_class,
        c1,
        c2,
        seq_len,
        seed,
        difficulty,
    };
    Ok(PyDataset {
        inner: synth_generate(&spec).map_err(err)?,
    })
}

/// 80:20 train/test split with five folds over the training part.
#[pyfunction]
fn split(py: Python<'_>, n: usize, seed: u64) -> PyResult<Py<PyAny>> {
    let s = split_indices(n, seed).map_err(err)?;
    let v = serde_json::json!({ "train": s.train, "test": s.test, "folds": s.folds });
    Ok(to_py(py, &v)?.unbind())
}

#[pyclass(name = "MtlNet", module = "mtlkit_py")]
struct PyMtlNet {
    model: MtlNet,
    params: ParamStore,
}

#[pymethods]
impl PyMtlNet {
    /// `config` is a JSON object of architecture fields; missing fields
    /// take their defaults.
    #[new]
    #[pyo3(signature = (classes1 = 4, classes2 = 3, seed = 0, config = None))]
    fn new(classes1: usize, classes2: usize, seed: u64, config: Option<&str>) -> PyResult<Self> {
        let cfg: MtlNetConfig = match config {
            Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => MtlNetConfig::default(),
        };
        let (model, params) = MtlNet::new(cfg.with_classes(classes1, classes2), seed).map_err(err)?;
        Ok(PyMtlNet { model, params })
    }

    fn param_count(&self) -> usize {
        param_count(self.model.config())
    }

    /// Eval-mode logits, one tensor per head.
    #[pyo3(signature = (x, batch = 64))]
    fn predict(&self, x: PyRef<'_, PyTensor>, batch: usize) -> PyResult<Vec<PyTensor>> {
        let out = predict_logits(&self.model, &self.params, &x.inner, batch).map_err(err)?;
        Ok(out.into_iter().map(|inner| PyTensor { inner }).collect())
    }
}

#[pyfunction]
fn paired_t_test(py: Python<'_>, a: Vec<f64>, b: Vec<f64>) -> PyResult<Py<PyAny>> {
    let t = metrics::paired_t_test(&a, &b).map_err(err)?;
    Ok(to_py(py, &t)?.unbind())
}

/// Accuracy, per-class sensitivity/PPV/NPV/F1 and macro-F1.
#[pyfunction]
fn classification_report(py: Python<'_>, y_true: Vec<usize>, y_pred: Vec<usize>, classes: usize) -> PyResult<Py<PyAny>> {
    let cm = metrics::confusion(&y_true, &y_pred, classes).map_err(err)?;
    let r = metrics::report(&cm).map_err(err)?;
    Ok(to_py(py, &r)?.unbind())
}

/// Runs the comparison described by a TOML experiment file body. Returns
/// the comparison CSV and the per-run records. The GIL is released while
/// training.
#[pyfunction]
#[pyo3(signature = (config_toml, output_dir = None))]
fn compare(py: Python<'_>, config_toml: &str, output_dir: Option<&str>) -> PyResult<Py<PyAny>> {
    let cfg = ExperimentConfig::from_toml(config_toml).map_err(err)?;
    let archive = py.detach(|| harness::run_comparison(&cfg)).map_err(err)?;
    if let Some(dir) = output_dir {
        harness::emit_reports(&archive, dir).map_err(err)?;
    }
    let table = ComparisonTable::from_archive(&archive).to_csv();
    let v = serde_json::json!({ "table": table, "runs": archive.records });
    Ok(to_py(py, &v)?.unbind())
}

#[pymodule]
fn mtlkit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyMtlNet>()?;
    m.add_function(wrap_pyfunction!(softened_probs, m)?)?;
    m.add_function(wrap_pyfunction!(kd_loss, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(born_again_total, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_total, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    m.add_function(wrap_pyfunction!(paired_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(classification_report, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    Ok(())
}
