//! Python bindings: `import emgevm`.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use emgevm::arburg;
use emgevm::baselines;
use emgevm::dataio;
use emgevm::evalkit;
use emgevm::evm::{self, Metric};
use emgevm::pipeline;
use emgevm::preprocess;
use emgevm::{ErrorKind, FeatureVector, LabeledDataset};

create_exception!(emgevm, EmgevmError, PyException);
create_exception!(emgevm, ConfigError, EmgevmError);
create_exception!(emgevm, DataError, EmgevmError);
create_exception!(emgevm, NumericError, EmgevmError);

fn to_py(e: emgevm::Error) -> PyErr {
    let msg = e.to_string();
    match e.kind() {
        ErrorKind::Config => ConfigError::new_err(msg),
        ErrorKind::Data => DataError::new_err(msg),
        ErrorKind::Numeric => NumericError::new_err(msg),
    }
}

trait OrPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> OrPy<T> for emgevm::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn metric(name: &str) -> PyResult<Metric> {
    name.parse().py_err()
}

fn dataset(
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    classes: Option<Vec<String>>,
) -> PyResult<LabeledDataset> {
    let classes = classes.unwrap_or_else(|| {
        let n = labels.iter().max().map_or(0, |m| m + 1);
        (0..n).map(|i| i.to_string()).collect()
    });
    let features = features.into_iter().map(FeatureVector).collect();
    LabeledDataset::new(features, labels, classes).py_err()
}

/// Reflection coefficients and noise variance of a frame: `(k, noise_var)`.
#[pyfunction]
#[pyo3(signature = (frame, order = arburg::DEFAULT_ORDER))]
fn burg(frame: Vec<f64>, order: usize) -> PyResult<(Vec<f64>, f64)> {
    let m = arburg::burg(&frame, order).py_err()?;
    Ok((m.k, m.noise_var))
}

/// Direct-form polynomial `[1, a1, ..., ap]` from reflection coefficients.
#[pyfunction]
fn reflection_to_ar(k: Vec<f64>) -> Vec<f64> {
    arburg::reflection_to_ar(&arburg::ReflectionModel {
        k,
        noise_var: 1.0,
        truncated_at: None,
    })
    .a
}

#[pyfunction]
fn lattice_filter(frame: Vec<f64>, k: Vec<f64>) -> Vec<f64> {
    arburg::lattice_filter(&frame, &k)
}

/// AR spectrum at normalised frequencies; the 512-point grid on `[0, 0.5]`
/// when `freqs` is omitted.
#[pyfunction]
#[pyo3(signature = (a, noise_var, freqs = None))]
fn ar_psd(a: Vec<f64>, noise_var: f64, freqs: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
    let model = arburg::ArModel::new(a, noise_var).py_err()?;
    let freqs = freqs.unwrap_or_else(|| arburg::psd_grid(arburg::DEFAULT_PSD_POINTS));
    arburg::ar_psd(&model, &freqs).py_err()
}

#[pyfunction]
#[pyo3(signature = (points = arburg::DEFAULT_PSD_POINTS))]
fn psd_grid(points: usize) -> Vec<f64> {
    arburg::psd_grid(points)
}

#[pyfunction]
fn autocorrelation(signal: Vec<f64>, max_lag: usize) -> PyResult<Vec<f64>> {
    arburg::autocorrelation(&signal, max_lag).py_err()
}

/// Levinson-Durbin solution of the Yule-Walker equations: `(a, noise_var)`.
#[pyfunction]
fn yule_walker(r: Vec<f64>, order: usize) -> PyResult<(Vec<f64>, f64)> {
    let m = arburg::yule_walker(&r, order).py_err()?;
    Ok((m.a, m.noise_var))
}

/// Maximum-likelihood Weibull fit: `(shape, scale)`.
#[pyfunction]
fn weibull_fit(samples: Vec<f64>) -> PyResult<(f64, f64)> {
    let w = evm::weibull_fit(&samples).py_err()?;
    Ok((w.shape, w.scale))
}

#[pyfunction]
#[pyo3(signature = (a, b, metric = "cosine"))]
fn distance(a: Vec<f64>, b: Vec<f64>, metric: &str) -> PyResult<f64> {
    evm::distance(&a, &b, self::metric(metric)?).py_err()
}

#[pyfunction]
#[pyo3(signature = (coeffs, noise_std, n, seed = 0))]
fn gen_ar_process(coeffs: Vec<f64>, noise_std: f64, n: usize, seed: u64) -> Vec<f64> {
    dataio::gen_ar_process(&coeffs, noise_std, n, seed)
}

#[pyfunction]
fn window_offsets(n: usize, win_len: usize, step: usize) -> Vec<usize> {
    dataio::window_offsets(n, win_len, step)
}

/// Default notch + band-pass chain applied to one channel.
#[pyfunction]
#[pyo3(signature = (signal, sample_rate = dataio::DATASET_SAMPLE_RATE))]
fn filter_signal(signal: Vec<f64>, sample_rate: f64) -> PyResult<Vec<f64>> {
    preprocess::apply_chain(&signal, &preprocess::default_chain(sample_rate)).py_err()
}

/// Accuracy, averages and per-class figures in percent. `None` predictions
/// count as rejections.
#[pyfunction]
fn metrics<'py>(
    py: Python<'py>,
    truth: Vec<usize>,
    predicted: Vec<Option<usize>>,
    classes: Vec<String>,
) -> PyResult<Bound<'py, PyDict>> {
    let cm = evalkit::confuse(&truth, &predicted, &classes).py_err()?;
    let r = evalkit::metrics(&cm).py_err()?;
    let out = PyDict::new(py);
    out.set_item("accuracy", r.accuracy)?;
    for (name, avg) in [("macro", r.macro_avg), ("weighted", r.weighted_avg)] {
        let d = PyDict::new(py);
        d.set_item("precision", avg.precision)?;
        d.set_item("recall", avg.recall)?;
        d.set_item("f1", avg.f1)?;
        out.set_item(name, d)?;
    }
    let per_class = PyDict::new(py);
    for c in &r.per_class {
        per_class.set_item(&c.label, (c.precision, c.recall, c.f1, c.support))?;
    }
    out.set_item("per_class", per_class)?;
    out.set_item("confusion", cm.counts)?;
    out.set_item("unknown", r.unknown_count)?;
    Ok(out)
}

/// Writes a synthetic dataset and returns the number of recordings.
#[pyfunction]
#[pyo3(signature = (root, subjects = 2, trials = 6, samples = 8000, seed = 7))]
fn write_synthetic_dataset(
    root: std::path::PathBuf,
    subjects: u32,
    trials: u32,
    samples: usize,
    seed: u64,
) -> PyResult<usize> {
    let cfg = dataio::SynthConfig {
        subjects,
        trials,
        samples,
        seed,
        ..Default::default()
    };
    Ok(dataio::write_synthetic_dataset(&root, &cfg)
        .py_err()?
        .entries
        .len())
}

/// Extract, train and test on a dataset directory; returns test accuracy.
/// `config` is a JSON run config, defaults when omitted.
#[pyfunction]
#[pyo3(signature = (root, config = None))]
fn run_experiment(root: std::path::PathBuf, config: Option<&str>) -> PyResult<f64> {
    let cfg = match config {
        Some(text) => pipeline::RunConfig::from_json(text).py_err()?,
        None => pipeline::RunConfig::default(),
    };
    let recs = dataio::open_dataset(&root, None).py_err()?;
    let table = pipeline::extract(&recs, &cfg).py_err()?;
    Ok(pipeline::run_on_table(&table, &cfg).py_err()?.accuracy())
}

#[pyclass(name = "EvmModel", module = "emgevm")]
struct PyEvm {
    inner: evm::EvmModel,
}

#[pymethods]
impl PyEvm {
    /// Fits on `features` (rows) and integer `labels`, then reduces when
    /// `cover_threshold` is given.
    #[staticmethod]
    #[pyo3(signature = (features, labels, classes = None, tail_size = evm::DEFAULT_TAIL_SIZE,
        metric = "cosine", cover_threshold = Some(evm::DEFAULT_COVER_THRESHOLD), reject_threshold = 0.0))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        classes: Option<Vec<String>>,
        tail_size: usize,
        metric: &str,
        cover_threshold: Option<f64>,
        reject_threshold: f64,
    ) -> PyResult<Self> {
        let ds = dataset(features, labels, classes)?;
        let mut model = evm::evm_fit(&ds, tail_size, self::metric(metric)?).py_err()?;
        if let Some(t) = cover_threshold {
            model = evm::evm_reduce(&model, t).py_err()?;
        }
        Ok(PyEvm {
            inner: model.with_reject_threshold(reject_threshold),
        })
    }

    /// `(label or None, probability)`.
    fn predict(&self, x: Vec<f64>) -> PyResult<(Option<usize>, f64)> {
        let p = evm::evm_predict(&self.inner, &x).py_err()?;
        Ok((p.label, p.probability))
    }

    fn scores(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.scores(&x).py_err()
    }

    #[getter]
    fn classes(&self) -> Vec<String> {
        self.inner.class_labels()
    }

    #[getter]
    fn num_extreme_vectors(&self) -> usize {
        self.inner.num_extreme_vectors()
    }

    fn to_json(&self) -> PyResult<String> {
        evm::model_to_json(&self.inner).py_err()
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyEvm {
            inner: evm::model_from_json(text).py_err()?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "EvmModel(classes={}, extreme_vectors={}, metric={})",
            self.inner.classes.len(),
            self.inner.num_extreme_vectors(),
            self.inner.metric
        )
    }
}

#[pyclass(name = "KnnModel", module = "emgevm")]
struct PyKnn {
    inner: baselines::KnnModel,
}

#[pymethods]
impl PyKnn {
    #[staticmethod]
    #[pyo3(signature = (features, labels, classes = None, k = baselines::DEFAULT_K, metric = "cosine"))]
    fn fit(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        classes: Option<Vec<String>>,
        k: usize,
        metric: &str,
    ) -> PyResult<Self> {
        let ds = dataset(features, labels, classes)?;
        Ok(PyKnn {
            inner: baselines::knn_fit(&ds, k, self::metric(metric)?).py_err()?,
        })
    }

    fn predict(&self, x: Vec<f64>) -> PyResult<usize> {
        baselines::knn_predict(&self.inner, &x).py_err()
    }

    fn __repr__(&self) -> String {
        format!(
            "KnnModel(k={}, points={})",
            self.inner.k,
            self.inner.points.len()
        )
    }
}

#[pymodule]
#[pyo3(name = "emgevm")]
fn emgevm_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("EmgevmError", py.get_type::<EmgevmError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("DataError", py.get_type::<DataError>())?;
    m.add("NumericError", py.get_type::<NumericError>())?;
    m.add_class::<PyEvm>()?;
    m.add_class::<PyKnn>()?;
    m.add_function(wrap_pyfunction!(burg, m)?)?;
    m.add_function(wrap_pyfunction!(reflection_to_ar, m)?)?;
    m.add_function(wrap_pyfunction!(lattice_filter, m)?)?;
    m.add_function(wrap_pyfunction!(ar_psd, m)?)?;
    m.add_function(wrap_pyfunction!(psd_grid, m)?)?;
    m.add_function(wrap_pyfunction!(autocorrelation, m)?)?;
    m.add_function(wrap_pyfunction!(yule_walker, m)?)?;
    m.add_function(wrap_pyfunction!(weibull_fit, m)?)?;
    m.add_function(wrap_pyfunction!(distance, m)?)?;
    m.add_function(wrap_pyfunction!(gen_ar_process, m)?)?;
    m.add_function(wrap_pyfunction!(window_offsets, m)?)?;
    m.add_function(wrap_pyfunction!(filter_signal, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(write_synthetic_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
