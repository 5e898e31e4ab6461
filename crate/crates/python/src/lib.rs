//! Python bindings: datasets with label noise, models and checkpoints,
//! the noisy-label trainers, and the numeric primitives.

use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use noisy_ssl::data::{self, DatasetSplit, NoiseSpec, SyntheticSpec};
use noisy_ssl::eval::EpochMetrics;
use noisy_ssl::lnl::{self, CoteachingConfig, DivideMixConfig, TrainConfig};
use noisy_ssl::model::{self, EncoderConfig, HeadKind};
use noisy_ssl::pretext::{self, PermutationSet, PretextConfig, PretextKind};
use noisy_ssl::Error;

fn to_py(e: Error) -> PyErr {
    let msg = format!("[{}] {e}", e.category());
    match e {
        Error::InvalidArgument(_) | Error::Config(_) => PyValueError::new_err(msg),
        Error::Io { .. } => PyIOError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

/// A labeled image split with corruption records.
#[pyclass(name = "Dataset", module = "noisy_ssl_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: DatasetSplit,
}

#[pymethods]
impl PyDataset {
    /// Procedural oriented-texture images, `per_class` per class.
    #[staticmethod]
    #[pyo3(signature = (num_classes, per_class, height, width, seed, template_seed=0, name="train", channels=1))]
    #[allow(clippy::too_many_arguments)]
    fn synthetic(
        num_classes: usize,
        per_class: usize,
        height: usize,
        width: usize,
        seed: u64,
        template_seed: u64,
        name: &str,
        channels: usize,
    ) -> PyResult<Self> {
        let spec = SyntheticSpec::new(num_classes, per_class, (height, width), seed)
            .with_templates(template_seed)
            .with_channels(channels)
            .named(name);
        Ok(PyDataset {
            inner: data::make_synthetic_dataset(&spec).map_err(to_py)?,
        })
    }

    /// `root/<class>/*.png|jpg`, resized to `height` x `width`.
    #[staticmethod]
    #[pyo3(signature = (root, height, width, channels=1))]
    fn load_folder(root: &str, height: usize, width: usize, channels: usize) -> PyResult<Self> {
        let names = data::discover_class_names(root).map_err(to_py)?;
        Ok(PyDataset {
            inner: data::load_image_folder(root, (height, width), &names, channels).map_err(to_py)?,
        })
    }

    /// Copy with symmetric label noise at rate `p`.
    fn with_noise(&self, p: f64, seed: u64) -> PyResult<Self> {
        let spec = NoiseSpec::new(p, self.inner.num_classes(), seed).map_err(to_py)?;
        Ok(PyDataset {
            inner: data::inject_symmetric_noise(&self.inner, &spec).map_err(to_py)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    fn clean_labels(&self) -> Vec<usize> {
        self.inner.clean_labels()
    }

    fn observed_labels(&self) -> Vec<usize> {
        self.inner.observed_labels()
    }

    fn corrupted_count(&self) -> usize {
        self.inner.corrupted_count()
    }

    /// Pixels of image `i` as a nested `[channel][row][col]` list.
    fn image(&self, i: usize) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let img = &self
            .inner
            .images()
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("index {i} out of range")))?
            .image;
        Ok(img
            .pixels()
            .outer_iter()
            .map(|c| c.outer_iter().map(|r| r.to_vec()).collect())
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(name={:?}, len={}, classes={}, corrupted={})",
            self.inner.name(),
            self.inner.len(),
            self.inner.num_classes(),
            self.inner.corrupted_count()
        )
    }
}

/// Residual CNN encoder with a classification (or pretext) head.
#[pyclass(name = "Model", module = "noisy_ssl_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyModel {
    inner: model::Model,
}

#[pymethods]
impl PyModel {
    /// Desk-scale encoder with a `classes`-way classifier head.
    #[staticmethod]
    #[pyo3(signature = (height, width, classes, seed, channels=1))]
    fn tiny(height: usize, width: usize, classes: usize, seed: u64, channels: usize) -> PyResult<Self> {
        let enc = EncoderConfig::tiny(height, width, channels);
        Ok(PyModel {
            inner: model::build_model(&enc, HeadKind::Classifier { classes }, seed).map_err(to_py)?,
        })
    }

    /// Load a checkpoint; a fresh `classes`-way head replaces any stored
    /// pretext head.
    #[staticmethod]
    fn load(path: &str, classes: usize, seed: u64) -> PyResult<Self> {
        let ckpt = model::load_checkpoint(path).map_err(to_py)?;
        Ok(PyModel {
            inner: ckpt.to_model(Some(HeadKind::Classifier { classes }), seed).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str, pretext: &str, seed: u64) -> PyResult<()> {
        let provenance = model::Provenance {
            pretext: pretext.into(),
            dataset: String::new(),
            epochs: 0,
            seed,
            config_hash: None,
        };
        model::save_checkpoint(&self.inner, provenance, path).map_err(to_py)
    }

    fn predict(&mut self, dataset: &PyDataset) -> Vec<usize> {
        self.inner.predict(&dataset.inner.pixels(), 256)
    }

    fn accuracy(&mut self, dataset: &PyDataset) -> f64 {
        let pred = self.inner.predict(&dataset.inner.pixels(), 256);
        let labels = dataset.inner.clean_labels();
        pred.iter().zip(&labels).filter(|(a, b)| a == b).count() as f64 / pred.len().max(1) as f64
    }

    fn parameter_hash(&self) -> String {
        self.inner.parameter_hash()
    }

    fn __repr__(&self) -> String {
        format!("Model(head={:?}, hash={})", self.inner.head_kind(), &self.inner.parameter_hash()[..12])
    }
}

fn metrics_to_py(py: Python<'_>, metrics: &[EpochMetrics]) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(metrics).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn train_config(epochs: usize, batch_size: usize, learning_rate: f64, seed: u64) -> TrainConfig {
    TrainConfig::retrain(seed)
        .with_epochs(epochs)
        .with_batch_size(batch_size)
        .with_learning_rate(learning_rate)
}

/// Cross-entropy training in place; returns per-epoch metric dicts.
#[pyfunction]
#[pyo3(signature = (model, train, test, epochs, seed, batch_size=256, learning_rate=0.01))]
fn train_ce(
    py: Python<'_>,
    model: &mut PyModel,
    train: &PyDataset,
    test: &PyDataset,
    epochs: usize,
    seed: u64,
    batch_size: usize,
    learning_rate: f64,
) -> PyResult<Py<PyAny>> {
    let cfg = train_config(epochs, batch_size, learning_rate, seed);
    let out = lnl::train_cross_entropy(&mut model.inner, &train.inner, &test.inner, &cfg).map_err(to_py)?;
    metrics_to_py(py, &out.metrics)
}

/// Co-teaching on two networks in place.
#[pyfunction]
#[pyo3(signature = (model_a, model_b, train, test, epochs, seed, forget_rate, ramp_epochs=10, batch_size=256, learning_rate=0.01))]
#[allow(clippy::too_many_arguments)]
fn train_coteaching(
    py: Python<'_>,
    model_a: &mut PyModel,
    model_b: &mut PyModel,
    train: &PyDataset,
    test: &PyDataset,
    epochs: usize,
    seed: u64,
    forget_rate: f64,
    ramp_epochs: usize,
    batch_size: usize,
    learning_rate: f64,
) -> PyResult<Py<PyAny>> {
    let cfg = train_config(epochs, batch_size, learning_rate, seed);
    let ct = CoteachingConfig {
        warmup_epochs: ramp_epochs,
        ..CoteachingConfig::new(forget_rate)
    };
    let out = lnl::train_coteaching(&mut model_a.inner, &mut model_b.inner, &train.inner, &test.inner, &cfg, &ct)
        .map_err(to_py)?;
    metrics_to_py(py, &out.metrics)
}

/// DivideMix on two networks in place.
#[pyfunction]
#[pyo3(signature = (model_a, model_b, train, test, epochs, seed, noise_rate, warmup_epochs=10, batch_size=128, learning_rate=0.01))]
#[allow(clippy::too_many_arguments)]
fn train_dividemix(
    py: Python<'_>,
    model_a: &mut PyModel,
    model_b: &mut PyModel,
    train: &PyDataset,
    test: &PyDataset,
    epochs: usize,
    seed: u64,
    noise_rate: f64,
    warmup_epochs: usize,
    batch_size: usize,
    learning_rate: f64,
) -> PyResult<Py<PyAny>> {
    let cfg = train_config(epochs, batch_size, learning_rate, seed);
    let dm = DivideMixConfig {
        warmup_epochs,
        batch_size,
        ..DivideMixConfig::for_noise_rate(noise_rate)
    };
    let out = lnl::train_dividemix(&mut model_a.inner, &mut model_b.inner, &train.inner, &test.inner, &cfg, &dm)
        .map_err(to_py)?;
    metrics_to_py(py, &out.metrics)
}

/// Self-supervised pretraining on the images of `dataset` (labels unused).
/// Returns the model (with its pretext head) and the per-epoch losses.
#[pyfunction]
#[pyo3(signature = (dataset, pretext, epochs, seed, batch_size=None, patch_size=8, permutations=100))]
fn pretrain(
    dataset: &PyDataset,
    pretext: &str,
    epochs: usize,
    seed: u64,
    batch_size: Option<usize>,
    patch_size: usize,
    permutations: usize,
) -> PyResult<(PyModel, Vec<f64>)> {
    let kind: PretextKind = pretext.parse().map_err(to_py)?;
    let mut cfg = PretextConfig::new(kind, epochs, seed);
    if let Some(b) = batch_size {
        cfg.train.batch_size = b;
    }
    cfg.patch_size = patch_size;
    cfg.permutations = permutations;
    cfg.projection_dim = 32;
    let img = &dataset.inner.images()[0].image;
    let enc = EncoderConfig::tiny(img.height(), img.width(), img.channels());
    let out = pretext::pretrain(&enc, &dataset.inner.pixels(), &cfg).map_err(to_py)?;
    Ok((PyModel { inner: out.model }, out.trace.iter().map(|e| e.loss).collect()))
}

/// Keep fraction `1 - tau * min((epoch / ramp)^c, 1)` for a 1-based epoch.
#[pyfunction]
#[pyo3(signature = (epoch, tau, ramp_epochs=10, exponent=1.0))]
fn forget_rate(epoch: usize, tau: f64, ramp_epochs: usize, exponent: f64) -> f64 {
    lnl::forget_rate(
        epoch,
        &CoteachingConfig {
            warmup_epochs: ramp_epochs,
            forget_rate: tau,
            exponent,
        },
    )
}

#[pyfunction]
fn small_loss_select(losses: Vec<f64>, keep_fraction: f64) -> PyResult<Vec<usize>> {
    lnl::small_loss_select(&losses, keep_fraction).map_err(to_py)
}

#[pyfunction]
fn sharpen(dist: Vec<f64>, temperature: f64) -> PyResult<Vec<f64>> {
    lnl::sharpen(&dist, temperature).map_err(to_py)
}

/// Two-component 1-D GMM; returns (means, variances, weights, clean posteriors).
#[pyfunction]
fn fit_gmm(values: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let fit = lnl::fit_gmm_1d(&values).map_err(to_py)?;
    Ok((fit.means.to_vec(), fit.variances.to_vec(), fit.weights.to_vec(), fit.posteriors))
}

#[pyfunction]
fn best_last(test_acc: Vec<f64>) -> PyResult<(f64, f64)> {
    noisy_ssl::eval::best_last_series(&test_acc).map_err(to_py)
}

#[pyfunction]
fn transition_matrix(noise_rate: f64, num_classes: usize) -> PyResult<Vec<Vec<f64>>> {
    let spec = NoiseSpec::new(noise_rate, num_classes, 0).map_err(to_py)?;
    let t = data::transition_matrix(&spec).map_err(to_py)?;
    Ok(t.outer_iter().map(|r| r.to_vec()).collect())
}

/// NT-Xent loss and its gradient for rows `[a_1..a_N, b_1..b_N]`.
#[pyfunction]
fn nt_xent(z: Vec<Vec<f64>>, temperature: f64) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let d = z.first().map_or(0, Vec::len);
    if z.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows must have equal length"));
    }
    let flat: Vec<f64> = z.iter().flatten().copied().collect();
    let arr = Array2::from_shape_vec((z.len(), d), flat).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let (loss, grad) = pretext::nt_xent_loss(arr.view(), temperature).map_err(to_py)?;
    Ok((loss, grad.outer_iter().map(|r| r.to_vec()).collect()))
}

/// Max-min Hamming permutation set of `count` permutations of `cells`.
#[pyfunction]
fn permutation_set(cells: usize, count: usize, seed: u64) -> PyResult<(Vec<Vec<usize>>, usize)> {
    let set = PermutationSet::generate(cells, count, seed).map_err(to_py)?;
    Ok((set.perms().to_vec(), set.min_hamming()))
}

/// Run the command-line front end with `args` (without the program name);
/// returns the exit code.
#[pyfunction]
fn cli(args: Vec<String>) -> i32 {
    noisy_ssl::cli::run(std::iter::once("noisy-ssl".to_string()).chain(args))
}

#[pymodule]
pub fn noisy_ssl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train_ce, m)?)?;
    m.add_function(wrap_pyfunction!(train_coteaching, m)?)?;
    m.add_function(wrap_pyfunction!(train_dividemix, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(forget_rate, m)?)?;
    m.add_function(wrap_pyfunction!(small_loss_select, m)?)?;
    m.add_function(wrap_pyfunction!(sharpen, m)?)?;
    m.add_function(wrap_pyfunction!(fit_gmm, m)?)?;
    m.add_function(wrap_pyfunction!(best_last, m)?)?;
    m.add_function(wrap_pyfunction!(transition_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(nt_xent, m)?)?;
    m.add_function(wrap_pyfunction!(permutation_set, m)?)?;
    m.add_function(wrap_pyfunction!(cli, m)?)?;
    Ok(())
}
