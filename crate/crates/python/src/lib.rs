//! Python bindings for `gantsne-core`.
//!
//! Matrices cross the boundary as lists of rows; anything that iterates as
//! rows of floats (lists, tuples, 2-D numpy arrays) is accepted on input.

use std::path::PathBuf;

use gantsne_core::compare::{one_nn_purity, ComparisonReport, KNN_K};
use gantsne_core::dataset::{self, LabeledDataset, PixelRange};
use gantsne_core::gan::{self, GanModel, TrainConfig};
use gantsne_core::numerics::{Matrix, RngState};
use gantsne_core::tsne::{self, TsneConfig};
use gantsne_core::{checkpoint, Error};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(gantsne, GantsneError, PyException, "Malformed data or a failed computation.");

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Input(_) | Error::Value(_) | Error::Shape { .. } => PyValueError::new_err(e.to_string()),
        other => GantsneError::new_err(other.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>, cols: Option<usize>) -> PyResult<Matrix> {
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, cols.unwrap_or(0)));
    }
    Matrix::from_rows(&rows).map_err(to_py)
}

fn parse_range(name: &str) -> PyResult<PixelRange> {
    match name {
        "raw" => Ok(PixelRange::Raw0_255),
        "unit" => Ok(PixelRange::Unit0_1),
        "sym" => Ok(PixelRange::Sym1_1),
        _ => Err(PyValueError::new_err(format!("pixel range must be raw, unit or sym, got {name:?}"))),
    }
}

fn range_name(r: PixelRange) -> &'static str {
    match r {
        PixelRange::Raw0_255 => "raw",
        PixelRange::Unit0_1 => "unit",
        PixelRange::Sym1_1 => "sym",
    }
}

/// Labeled 28x28 images, one row of 784 pixels per image.
#[pyclass(name = "Dataset", module = "gantsne", frozen)]
struct PyDataset(LabeledDataset);

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (images, labels, pixel_range = "raw"))]
    fn new(images: Vec<Vec<f64>>, labels: Vec<u8>, pixel_range: &str) -> PyResult<Self> {
        let images = matrix(images, Some(dataset::IMAGE_PIXELS))?;
        LabeledDataset::new(images, labels, parse_range(pixel_range)?).map(Self).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, pixel_range={:?})", self.0.len(), range_name(self.0.pixel_range()))
    }

    #[getter]
    fn labels(&self) -> Vec<u8> {
        self.0.labels().to_vec()
    }

    #[getter]
    fn images(&self) -> Vec<Vec<f64>> {
        self.0.images().to_rows()
    }

    #[getter]
    fn pixel_range(&self) -> &'static str {
        range_name(self.0.pixel_range())
    }

    fn select(&self, indices: Vec<usize>) -> PyResult<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.0.len()) {
            return Err(PyValueError::new_err(format!("index {bad} out of range for {} rows", self.0.len())));
        }
        Ok(Self(self.0.select(&indices)))
    }

    fn concat(&self, other: &PyDataset) -> PyResult<Self> {
        self.0.concat(&other.0).map(Self).map_err(to_py)
    }

    fn normalize(&self, pixel_range: &str) -> PyResult<Self> {
        Ok(Self(dataset::normalize(&self.0, parse_range(pixel_range)?)))
    }

    fn filter_by_label(&self, digit: u8) -> PyResult<Self> {
        dataset::filter_by_label(&self.0, digit).map(Self).map_err(to_py)
    }

    #[pyo3(signature = (n, seed = 0))]
    fn sample(&self, n: usize, seed: u64) -> PyResult<Self> {
        dataset::sample_n(&self.0, n, &mut RngState::new(seed)).map(Self).map_err(to_py)
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        dataset::save_csv(&self.0, path).map_err(to_py)
    }

    fn save_idx(&self, images_path: PathBuf, labels_path: PathBuf) -> PyResult<()> {
        dataset::save_idx(&self.0, images_path, labels_path).map_err(to_py)
    }

    fn to_csv(&self) -> String {
        dataset::to_csv_string(&self.0)
    }
}

#[pyfunction]
fn load_idx(images_path: PathBuf, labels_path: PathBuf) -> PyResult<PyDataset> {
    dataset::load_idx(images_path, labels_path).map(PyDataset).map_err(to_py)
}

#[pyfunction]
fn load_csv(path: PathBuf) -> PyResult<PyDataset> {
    dataset::load_csv(path).map(PyDataset).map_err(to_py)
}

/// A generator/discriminator pair with optimizer state and training history.
#[pyclass(name = "GanModel", module = "gantsne", frozen)]
struct PyGanModel(GanModel);

#[pymethods]
impl PyGanModel {
    /// Untrained model with the default architecture.
    #[staticmethod]
    #[pyo3(signature = (seed = 0))]
    fn build(seed: u64) -> PyResult<Self> {
        gan::build_gan(&TrainConfig { seed, ..TrainConfig::default() }).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        checkpoint::load(path).map(Self).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.0, path).map_err(to_py)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, pyo3::types::PyBytes> {
        pyo3::types::PyBytes::new(py, &checkpoint::to_bytes(&self.0))
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        checkpoint::from_bytes(data).map(Self).map_err(to_py)
    }

    #[getter]
    fn class_label(&self) -> Option<u8> {
        self.0.class_label
    }

    #[getter]
    fn epochs_completed(&self) -> usize {
        self.0.epochs_completed()
    }

    #[getter]
    fn generator_params(&self) -> usize {
        self.0.generator.param_count()
    }

    #[getter]
    fn discriminator_params(&self) -> usize {
        self.0.discriminator.param_count()
    }

    /// One dict per epoch with keys epoch, L_G, L_D, mean_D_real, mean_D_fake.
    fn history<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.0
            .history
            .iter()
            .map(|h| {
                let d = PyDict::new(py);
                d.set_item("epoch", h.epoch)?;
                d.set_item("L_G", h.gen_loss)?;
                d.set_item("L_D", h.disc_loss)?;
                d.set_item("mean_D_real", h.mean_d_real)?;
                d.set_item("mean_D_fake", h.mean_d_fake)?;
                Ok(d)
            })
            .collect()
    }

    /// `n` synthetic images in raw pixel units.
    #[pyo3(signature = (n, seed = 0))]
    fn generate(&self, py: Python<'_>, n: usize, seed: u64) -> PyResult<PyDataset> {
        py.detach(|| gan::generate(&self.0, n, &mut RngState::new(seed))).map(PyDataset).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("GanModel(class_label={:?}, epochs={})", self.0.class_label, self.0.epochs_completed())
    }
}

/// Trains a GAN on every image in `data`. Pixels are rescaled to [-1, 1].
#[pyfunction]
#[pyo3(signature = (
    data, epochs = 2400, batch_size = 128, learning_rate = 0.0002, seed = 0,
    max_batches = None, snapshot_every = 50, snapshot_samples = 100
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    data: &PyDataset,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    seed: u64,
    max_batches: Option<usize>,
    snapshot_every: usize,
    snapshot_samples: usize,
) -> PyResult<PyGanModel> {
    let config = TrainConfig {
        epochs,
        batch_size,
        learning_rate,
        seed,
        max_batches,
        snapshot_every,
        snapshot_samples,
        ..TrainConfig::default()
    };
    let ds = dataset::normalize(&data.0, PixelRange::Sym1_1);
    py.detach(|| gan::train(&ds, &config, &mut ())).map(PyGanModel).map_err(to_py)
}

/// Exact t-SNE. Returns `(points, kl_trace)`.
#[pyfunction]
#[pyo3(signature = (x, dims = 2, perplexity = 30.0, iterations = 1000, learning_rate = 200.0, seed = 0))]
fn run_tsne(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    dims: usize,
    perplexity: f64,
    iterations: usize,
    learning_rate: f64,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let x = matrix(x, None)?;
    let config = TsneConfig {
        out_dims: dims,
        perplexity,
        iterations,
        learning_rate,
        seed,
        ..TsneConfig::default()
    };
    let emb = py.detach(|| tsne::run_tsne(&x, &config)).map_err(to_py)?;
    Ok((emb.points.to_rows(), emb.kl_trace))
}

/// Symmetrized input affinities `P` for `x`.
#[pyfunction]
#[pyo3(signature = (x, perplexity = 30.0))]
fn input_affinities(x: Vec<Vec<f64>>, perplexity: f64) -> PyResult<Vec<Vec<f64>>> {
    let x = matrix(x, None)?;
    Ok(tsne::input_affinities(&x, perplexity).map_err(to_py)?.values().to_rows())
}

/// Overlap statistics for an embedding whose rows are flagged real or synthetic.
#[pyfunction]
#[pyo3(signature = (points, synthetic, k = KNN_K))]
fn compare<'py>(py: Python<'py>, points: Vec<Vec<f64>>, synthetic: Vec<bool>, k: usize) -> PyResult<Bound<'py, PyDict>> {
    let points = matrix(points, None)?;
    let r = ComparisonReport::compute(&points, &synthetic, k).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("n_real", r.n_real)?;
    d.set_item("n_synthetic", r.n_synthetic)?;
    d.set_item("centroid_distance", r.centroid_distance)?;
    d.set_item("mean_real_spread", r.mean_real_spread)?;
    d.set_item("overlap_ratio", r.overlap_ratio)?;
    d.set_item("knn_real_fraction", r.knn_real_fraction)?;
    Ok(d)
}

/// Fraction of points whose nearest neighbour shares their label.
#[pyfunction]
fn nn_purity(points: Vec<Vec<f64>>, labels: Vec<u8>) -> PyResult<f64> {
    let points = matrix(points, None)?;
    if labels.len() != points.rows() {
        return Err(PyValueError::new_err(format!("{} labels for {} points", labels.len(), points.rows())));
    }
    Ok(one_nn_purity(&points, &labels))
}

#[pymodule]
fn gantsne(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("GantsneError", m.py().get_type::<GantsneError>())?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyGanModel>()?;
    m.add_function(wrap_pyfunction!(load_idx, m)?)?;
    m.add_function(wrap_pyfunction!(load_csv, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(run_tsne, m)?)?;
    m.add_function(wrap_pyfunction!(input_affinities, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(nn_purity, m)?)?;
    Ok(())
}
