//! Python bindings: special functions, scene simulation, the CSM metric,
//! datasets, and GAN training and evaluation.

use std::path::PathBuf;

use num_complex::Complex64;
use pyo3::exceptions::{PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use csmgan_core::acoustics::{sample_model, SimulationVariant};
use csmgan_core::csm::{accuracy, csm_distance, CsmTensor, SliceMetricParams};
use csmgan_core::cxnn::ActivationSpec;
use csmgan_core::gan::{train_loop, GanArchitecture, GanModel, TrainConfig};
use csmgan_core::tasks::{evaluate, hpo_grid, read_dataset_dir, Scale, TaskDataset};
use csmgan_core::{sphmath, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Validation { .. } | Error::Domain(_) | Error::Shape { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn scale_of(name: &str) -> PyResult<Scale> {
    match name {
        "desk" => Ok(Scale::Desk),
        "paper" => Ok(Scale::Paper),
        _ => Err(PyValueError::new_err(format!("unknown scale {name:?}"))),
    }
}

#[pyfunction]
fn spherical_harmonic(l: usize, m: i64, theta: f64, phi: f64) -> PyResult<Complex64> {
    sphmath::spherical_harmonic(l, m, theta, phi).map_err(py_err)
}

#[pyfunction]
fn spherical_hankel1(l: usize, x: f64) -> PyResult<Complex64> {
    sphmath::spherical_hankel1(l, x).map_err(py_err)
}

#[pyfunction]
fn spherical_hankel2(l: usize, x: f64) -> PyResult<Complex64> {
    sphmath::spherical_hankel2(l, x).map_err(py_err)
}

/// Normalized cross-spectral matrices `[mics, mics, bins]`.
#[pyclass(name = "CsmTensor", module = "csmgan", from_py_object)]
#[derive(Clone)]
struct PyCsm {
    inner: CsmTensor,
}

#[pymethods]
impl PyCsm {
    #[getter]
    fn mics(&self) -> usize {
        self.inner.mics()
    }

    #[getter]
    fn bins(&self) -> usize {
        self.inner.bins()
    }

    fn get(&self, i: usize, j: usize, k: usize) -> PyResult<Complex64> {
        let (m, _, b) = self.inner.dims();
        if i >= m || j >= m || k >= b {
            return Err(PyIndexError::new_err(format!(
                "({i}, {j}, {k}) out of range"
            )));
        }
        Ok(self.inner.get(i, j, k))
    }

    /// Entries in `(i, j, k)` row-major order.
    fn flat(&self) -> Vec<Complex64> {
        self.inner.tensor().to_complex()
    }

    fn slice_norm(&self, k: usize) -> PyResult<f64> {
        if k >= self.inner.bins() {
            return Err(PyIndexError::new_err(format!("bin {k} out of range")));
        }
        Ok(self.inner.slice_norm(k))
    }

    #[pyo3(signature = (tol = 1e-12))]
    fn is_hermitian(&self, tol: f64) -> bool {
        self.inner.is_hermitian(tol)
    }

    fn __repr__(&self) -> String {
        format!(
            "CsmTensor(mics={}, bins={})",
            self.inner.mics(),
            self.inner.bins()
        )
    }
}

/// Normalized CSM of scene `index` from `seed` at a scale profile.
#[pyfunction]
#[pyo3(signature = (seed, index, scale = "desk", directivity = false, reflections = false, ambient = false))]
fn simulate_csm(
    seed: u64,
    index: u64,
    scale: &str,
    directivity: bool,
    reflections: bool,
    ambient: bool,
) -> PyResult<PyCsm> {
    let ctx = scale_of(scale)?.profile().context();
    let variant = SimulationVariant {
        directivity,
        reflections,
        ambient,
    };
    let inner = ctx
        .csm(&sample_model(seed, index), variant)
        .map_err(py_err)?;
    Ok(PyCsm { inner })
}

#[pyfunction]
#[pyo3(signature = (a, b, kappa = 0.9))]
fn distance(a: &PyCsm, b: &PyCsm, kappa: f64) -> PyResult<f64> {
    let params = SliceMetricParams::new(kappa, a.inner.bins()).map_err(py_err)?;
    csm_distance(&a.inner, &b.inner, &params).map_err(py_err)
}

/// `1 − ε(target, output)`.
#[pyfunction]
#[pyo3(signature = (output, target, kappa = 0.9))]
fn g_accuracy(output: &PyCsm, target: &PyCsm, kappa: f64) -> PyResult<f64> {
    let params = SliceMetricParams::new(kappa, target.inner.bins()).map_err(py_err)?;
    accuracy(&output.inner, &target.inner, &params).map_err(py_err)
}

#[pyfunction]
fn hpo_grid_size() -> usize {
    hpo_grid().len()
}

/// Train and test pairs read from a dataset directory.
#[pyclass(name = "Dataset", module = "csmgan")]
struct PyDataset {
    train: TaskDataset,
    test: TaskDataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        let (train, test) = read_dataset_dir(&dir).map_err(py_err)?;
        Ok(Self { train, test })
    }

    #[getter]
    fn task(&self) -> u8 {
        self.train.task.get()
    }

    #[getter]
    fn mics(&self) -> usize {
        self.train.mics
    }

    #[getter]
    fn bins(&self) -> usize {
        self.train.bins
    }

    fn __len__(&self) -> usize {
        self.train.len() + self.test.len()
    }

    #[getter]
    fn train_len(&self) -> usize {
        self.train.len()
    }

    #[getter]
    fn test_len(&self) -> usize {
        self.test.len()
    }

    /// `(model index, x, y)` of test pair `i`.
    fn test_pair(&self, i: usize) -> PyResult<(u64, PyCsm, PyCsm)> {
        if i >= self.test.len() {
            return Err(PyIndexError::new_err(format!("test pair {i} out of range")));
        }
        Ok((
            self.test.model_indices[i],
            PyCsm {
                inner: self.test.x[i].clone(),
            },
            PyCsm {
                inner: self.test.y[i].clone(),
            },
        ))
    }
}

fn activation_of(kind: &str, value: f64) -> PyResult<ActivationSpec> {
    match kind {
        "cardioid" => Ok(ActivationSpec::LeakyCardioid { alpha: value }),
        "modrelu" => Ok(ActivationSpec::ModRelu { bias: value }),
        _ => Err(PyValueError::new_err(format!(
            "unknown activation {kind:?}"
        ))),
    }
}

/// Generator, discriminator and optimizer state with its training configuration.
#[pyclass(name = "GanModel", module = "csmgan")]
struct PyGan {
    model: GanModel,
    config: TrainConfig,
}

#[pymethods]
impl PyGan {
    #[new]
    #[pyo3(signature = (
        mics, bins, n_gen = 16, n_dis = 16, n_den = 64, n_lay = 1,
        activation = "cardioid", activation_param = 0.5,
        lr_gen = 2e-5, lr_dis = 2e-5, seed = 0
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        mics: usize,
        bins: usize,
        n_gen: usize,
        n_dis: usize,
        n_den: usize,
        n_lay: usize,
        activation: &str,
        activation_param: f64,
        lr_gen: f64,
        lr_dis: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let arch = GanArchitecture {
            n_gen,
            n_dis,
            n_den,
            n_lay,
            activation: activation_of(activation, activation_param)?,
        };
        let config = TrainConfig {
            lr_gen,
            lr_dis,
            seed,
            ..TrainConfig::default()
        };
        config.validate().map_err(py_err)?;
        let model = GanModel::new(arch, mics, bins, &config).map_err(py_err)?;
        Ok(Self { model, config })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (model, config) = GanModel::load(&path).map_err(py_err)?;
        Ok(Self { model, config })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.model.save(&path, &self.config).map_err(py_err)
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.model.epoch
    }

    fn param_count(&self) -> usize {
        self.model.generator.param_count()
    }

    /// Train up to `epochs` completed epochs; returns the mean transformation
    /// term of each epoch run.
    fn train(&mut self, py: Python<'_>, data: &PyDataset, epochs: usize) -> PyResult<Vec<f64>> {
        self.config.epochs = epochs;
        let config = self.config;
        let model = &mut self.model;
        let records = py
            .detach(|| train_loop(model, data.train.pairs(), None, &config, |_, _| Ok(())))
            .map_err(py_err)?;
        Ok(records.iter().map(|r| r.transformation).collect())
    }

    /// Mean test accuracy of the generator and of the identity.
    fn evaluate(&self, py: Python<'_>, data: &PyDataset) -> PyResult<(f64, f64)> {
        let report = py
            .detach(|| evaluate(&self.model.generator, &data.test, self.config.kappa))
            .map_err(py_err)?;
        Ok((report.mean_gen, report.mean_id))
    }

    fn generate(&self, x: &PyCsm) -> PyResult<PyCsm> {
        let inner = self.model.generator.apply(&x.inner).map_err(py_err)?;
        Ok(PyCsm { inner })
    }

    fn discriminate(&self, x: &PyCsm) -> PyResult<f64> {
        self.model
            .discriminator
            .probability(&x.inner)
            .map_err(py_err)
    }
}

#[pymodule]
fn csmgan(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(spherical_harmonic, m)?)?;
    m.add_function(wrap_pyfunction!(spherical_hankel1, m)?)?;
    m.add_function(wrap_pyfunction!(spherical_hankel2, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_csm, m)?)?;
    m.add_function(wrap_pyfunction!(distance, m)?)?;
    m.add_function(wrap_pyfunction!(g_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(hpo_grid_size, m)?)?;
    m.add_class::<PyCsm>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyGan>()?;
    Ok(())
}
