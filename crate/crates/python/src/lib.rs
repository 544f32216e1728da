//! Python bindings. Images travel as raw interleaved `bytes`, mattes as lists
//! of floats in `[0, 1]`.

use std::path::PathBuf;

use portrait_core::compositor;
use portrait_core::fcn::{seeded_default_check, FcnModel};
use portrait_core::image::{self, AlphaMatte, RasterImage};
use portrait_core::pipeline::{self, PipelineConfig};
use portrait_core::train::{self, OptimizerKind, OptimizerState, SamplePair, TrainConfig};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Image", module = "portrait_mode", from_py_object)]
#[derive(Clone)]
struct PyImage {
    inner: RasterImage,
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> PyResult<Self> {
        RasterImage::new(width, height, channels, data).map(|inner| Self { inner }).map_err(value_err)
    }

    /// Read a binary PPM (3 channels) or PGM (1 channel).
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let bytes = std::fs::read(&path).map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
        image::decode_image(&bytes).map(|inner| Self { inner }).map_err(value_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let bytes = image::encode_image(&self.inner).map_err(value_err)?;
        portrait_core::io::write_atomic(&path, &bytes).map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.inner.data())
    }

    fn pixel(&self, x: usize, y: usize, c: usize) -> PyResult<u8> {
        if x >= self.inner.width() || y >= self.inner.height() || c >= self.inner.channels() {
            return Err(value_err(format!("pixel ({x}, {y}, {c}) out of range")));
        }
        Ok(self.inner.sample(x, y, c))
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{}x{})", self.inner.width(), self.inner.height(), self.inner.channels())
    }
}

#[pyclass(name = "Matte", module = "portrait_mode", from_py_object)]
#[derive(Clone)]
struct PyMatte {
    inner: AlphaMatte,
}

#[pymethods]
impl PyMatte {
    #[new]
    fn new(width: usize, height: usize, values: Vec<f64>) -> PyResult<Self> {
        AlphaMatte::new(width, height, values).map(|inner| Self { inner }).map_err(value_err)
    }

    /// α = gray / 255 from a single-channel image.
    #[staticmethod]
    fn from_image(img: &PyImage) -> PyResult<Self> {
        image::matte_from_gray(&img.inner).map(|inner| Self { inner }).map_err(value_err)
    }

    fn to_image(&self) -> PyImage {
        PyImage { inner: image::matte_to_gray(&self.inner) }
    }

    fn threshold(&self, t: f64) -> Self {
        Self { inner: self.inner.threshold(t) }
    }

    fn feather(&self, radius: usize) -> Self {
        Self { inner: compositor::feather_matte(&self.inner, radius) }
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Matte({}x{})", self.inner.width(), self.inner.height())
    }
}

/// Segmentation network plus the optimizer state a checkpoint carries.
#[pyclass(name = "Model", module = "portrait_mode", from_py_object)]
#[derive(Clone)]
struct PyModel {
    model: FcnModel,
    state: OptimizerState,
}

#[pymethods]
impl PyModel {
    /// Default architecture, seeded initialization.
    #[new]
    #[pyo3(signature = (seed = 0))]
    fn new(seed: u64) -> Self {
        let model = FcnModel::with_seed(seed);
        let state = OptimizerState::new(OptimizerKind::Adam, model.parameters());
        Self { model, state }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        train::load_checkpoint(&path).map(|(model, state)| Self { model, state }).map_err(value_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        train::save_checkpoint(&self.model, &self.state, &path).map_err(value_err)
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.model.parameter_count()
    }

    #[getter]
    fn steps(&self) -> u64 {
        self.state.step()
    }

    /// Soft foreground matte for `img`.
    fn segment(&self, img: &PyImage) -> PyResult<PyMatte> {
        pipeline::segment(&self.model, &img.inner).map(|inner| PyMatte { inner }).map_err(value_err)
    }
}

fn pairs_from(samples: Vec<(PyImage, PyImage)>) -> PyResult<Vec<SamplePair>> {
    samples
        .into_iter()
        .enumerate()
        .map(|(i, (img, mask))| SamplePair::new(format!("sample_{i:05}"), img.inner, mask.inner).map_err(value_err))
        .collect()
}

fn pipeline_config(sigma: f64, feather: usize, threshold: f64) -> PipelineConfig {
    PipelineConfig { model_path: None, blur_sigma: sigma, feather_radius: feather, mask_threshold: threshold }
}

/// Normalized 1-D Gaussian weights, centre at index `radius`.
#[pyfunction]
fn gaussian_kernel(sigma: f64) -> PyResult<Vec<f64>> {
    compositor::build_kernel(sigma).map(|k| k.weights().to_vec()).map_err(value_err)
}

#[pyfunction]
fn gaussian_blur(img: &PyImage, sigma: f64) -> PyResult<PyImage> {
    let kernel = compositor::build_kernel(sigma).map_err(value_err)?;
    Ok(PyImage { inner: compositor::gaussian_blur(&img.inner, &kernel) })
}

#[pyfunction]
fn alpha_blend(foreground: &PyImage, background: &PyImage, matte: &PyMatte) -> PyResult<PyImage> {
    compositor::alpha_blend(&foreground.inner, &background.inner, &matte.inner)
        .map(|inner| PyImage { inner })
        .map_err(value_err)
}

/// Threshold, feather and blend `img` over its own blur through `matte`.
#[pyfunction]
#[pyo3(signature = (img, matte, sigma = 8.0, feather = 3, threshold = 0.5))]
fn composite(img: &PyImage, matte: &PyMatte, sigma: f64, feather: usize, threshold: f64) -> PyResult<PyImage> {
    pipeline::composite_portrait(&img.inner, &matte.inner, &pipeline_config(sigma, feather, threshold))
        .map(|inner| PyImage { inner })
        .map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (img, model, sigma = 8.0, feather = 3, threshold = 0.5))]
fn portrait(img: &PyImage, model: &PyModel, sigma: f64, feather: usize, threshold: f64) -> PyResult<PyImage> {
    pipeline::run_portrait(&img.inner, &model.model, &pipeline_config(sigma, feather, threshold))
        .map(|inner| PyImage { inner })
        .map_err(value_err)
}

/// `count` synthetic (image, mask) pairs of `size`×`size` pixels.
#[pyfunction]
#[pyo3(signature = (count, size, seed = 0))]
fn synth(count: usize, size: usize, seed: u64) -> PyResult<Vec<(PyImage, PyImage)>> {
    let pairs = train::generate_synthetic_dataset(count, size, seed).map_err(value_err)?;
    Ok(pairs
        .into_iter()
        .map(|p| (PyImage { inner: p.image().clone() }, PyImage { inner: p.mask().clone() }))
        .collect())
}

/// Continue training `model`; returns the updated model and per-epoch losses.
#[pyfunction]
#[pyo3(signature = (model, samples, epochs = 20, lr = 1e-3, optimizer = "adam", batch = 4, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn train_model(
    py: Python<'_>,
    model: &PyModel,
    samples: Vec<(PyImage, PyImage)>,
    epochs: usize,
    lr: f64,
    optimizer: &str,
    batch: usize,
    seed: u64,
) -> PyResult<(PyModel, Vec<f64>)> {
    let kind: OptimizerKind = optimizer.parse().map_err(PyValueError::new_err)?;
    let dataset = pairs_from(samples)?;
    let config = TrainConfig { epochs, learning_rate: lr, optimizer: kind, batch_size: batch, seed, ..TrainConfig::default() };
    let state = if model.state.kind() == kind {
        model.state.clone()
    } else {
        OptimizerState::new(kind, model.model.parameters())
    };
    let start = model.model.clone();
    let outcome = py
        .detach(move || train::train_with(start, state, &dataset, &config, |_, _| {}))
        .map_err(value_err)?;
    Ok((PyModel { model: outcome.model, state: outcome.optimizer }, outcome.history))
}

/// `(pixel_accuracy, mean_iou)` on (image, mask) pairs.
#[pyfunction]
#[pyo3(signature = (model, samples, threshold = 0.5))]
fn evaluate(model: &PyModel, samples: Vec<(PyImage, PyImage)>, threshold: f64) -> PyResult<(f64, f64)> {
    let dataset = pairs_from(samples)?;
    let m = train::evaluate(&model.model, &dataset, threshold).map_err(value_err)?;
    Ok((m.pixel_accuracy, m.mean_iou))
}

/// Maximum relative gradient error on the default network, seeded 16×16 input.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn gradcheck(py: Python<'_>, seed: u64) -> PyResult<f64> {
    let report = py.detach(move || seeded_default_check(seed, 16, 1e-3, 1e-3)).map_err(value_err)?;
    Ok(report.max_rel_error)
}

#[pymodule]
fn portrait_mode(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyMatte>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(gaussian_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_blur, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_blend, m)?)?;
    m.add_function(wrap_pyfunction!(composite, m)?)?;
    m.add_function(wrap_pyfunction!(portrait, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
