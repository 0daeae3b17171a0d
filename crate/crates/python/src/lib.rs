//! Python bindings. Tensors cross the boundary as `Tensor` objects holding
//! NCHW dims and a flat row-major list of floats.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use lrfpn::harness::checkpoint::{apply_checkpoint, load_checkpoint, save_checkpoint};
use lrfpn::harness::gradcheck::{run_gradcheck, GradcheckConfig};
use lrfpn::harness::oracle::run_oracle;
use lrfpn::harness::scene::{gen_scene, SceneSpec};
use lrfpn::kernels::{self, ConvPath};
use lrfpn::pyramid::{train_toy, TrainConfig};
use lrfpn::{DType, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Verification(_) | Error::Diverged { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(name = "Tensor", module = "lrfpn_py", from_py_object)]
#[derive(Clone)]
pub struct PyTensor {
    inner: lrfpn::Tensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(dims: [usize; 4], data: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: lrfpn::Tensor::from_vec(dims, data).map_err(to_py)? })
    }

    #[staticmethod]
    fn zeros(dims: [usize; 4]) -> Self {
        Self { inner: lrfpn::Tensor::zeros(dims) }
    }

    #[getter]
    fn dims(&self) -> [usize; 4] {
        self.inner.dims()
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn sum(&self) -> f64 {
        self.inner.sum()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(dims={:?})", self.inner.dims())
    }
}

fn wrap(t: lrfpn::Tensor) -> PyTensor {
    PyTensor { inner: t }
}

/// Ablation switches parsed from tokens (`sp,pp,si,ci,li,ni`) or a lattice label.
#[pyclass(name = "AblationFlags", module = "lrfpn_py", from_py_object)]
#[derive(Clone, Copy)]
pub struct PyFlags {
    inner: lrfpn::AblationFlags,
}

#[pymethods]
impl PyFlags {
    #[new]
    #[pyo3(signature = (spec = "full"))]
    fn new(spec: &str) -> PyResult<Self> {
        Ok(Self { inner: lrfpn::AblationFlags::parse(spec).map_err(to_py)? })
    }

    #[staticmethod]
    fn lattice() -> Vec<String> {
        lrfpn::pyramid::LATTICE.iter().map(|(label, _)| label.to_string()).collect()
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.label()
    }

    #[getter]
    fn tokens(&self) -> String {
        self.inner.tokens()
    }

    fn __repr__(&self) -> String {
        format!("AblationFlags('{}')", self.inner.label())
    }
}

fn model_config(miniature: bool) -> lrfpn::ModelConfig {
    if miniature {
        lrfpn::ModelConfig::miniature()
    } else {
        lrfpn::ModelConfig::default()
    }
}

#[pyclass(name = "LrFpnModel", module = "lrfpn_py")]
pub struct PyModel {
    inner: lrfpn::LrFpnModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (flags = "full", seed = 0, miniature = false))]
    fn new(flags: &str, seed: u64, miniature: bool) -> PyResult<Self> {
        let flags = lrfpn::AblationFlags::parse(flags).map_err(to_py)?;
        let inner = lrfpn::LrFpnModel::new(model_config(miniature), flags, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn flags(&self) -> PyFlags {
        PyFlags { inner: self.inner.flags }
    }

    #[getter]
    fn input_size(&self) -> usize {
        self.inner.config.input_size
    }

    fn param_names(&self) -> Vec<String> {
        self.inner.store.iter().map(|(_, p)| p.name.clone()).collect()
    }

    fn num_params(&self) -> usize {
        self.inner.store.numel()
    }

    fn param(&self, name: &str) -> PyResult<PyTensor> {
        self.inner
            .store
            .by_name(name)
            .map(|p| wrap(p.value.clone()))
            .ok_or_else(|| PyValueError::new_err(format!("no param named {name}")))
    }

    /// P₁..P₅ for a `[N, C, S, S]` image batch.
    fn forward(&self, images: &PyTensor) -> PyResult<Vec<PyTensor>> {
        let mut tape = self.inner.tape();
        let pyr = self.inner.forward(&mut tape, &images.inner).map_err(to_py)?;
        Ok(pyr.levels.iter().map(|&v| wrap(tape.value(v).clone())).collect())
    }

    /// Per-cell object probabilities on P₁.
    fn predict(&self, images: &PyTensor) -> PyResult<PyTensor> {
        let mut tape = self.inner.tape();
        let pyr = self.inner.forward(&mut tape, &images.inner).map_err(to_py)?;
        let pred = self.inner.head(&mut tape, pyr.levels[0]).map_err(to_py)?;
        Ok(wrap(tape.value(pred).clone()))
    }

    #[pyo3(signature = (path, dtype = "f64"))]
    fn save(&self, path: PathBuf, dtype: &str) -> PyResult<()> {
        let dtype: DType = dtype.parse().map_err(PyValueError::new_err)?;
        save_checkpoint(&self.inner.store, &path, dtype).map_err(to_py)
    }

    fn load(&mut self, path: PathBuf) -> PyResult<()> {
        let entries = load_checkpoint(&path).map_err(to_py)?;
        apply_checkpoint(&mut self.inner.store, &entries).map_err(to_py)
    }
}

/// Train a fresh model; returns the per-step losses.
#[pyfunction]
#[pyo3(signature = (flags = "full", seed = 0, steps = 300, miniature = false))]
fn train(flags: &str, seed: u64, steps: usize, miniature: bool) -> PyResult<Vec<f64>> {
    let flags = lrfpn::AblationFlags::parse(flags).map_err(to_py)?;
    let cfg = TrainConfig { steps, ..TrainConfig::default() };
    let (trace, _) = train_toy(&model_config(miniature), &cfg, flags, seed).map_err(to_py)?;
    Ok(trace.losses)
}

/// `(passed, max_rel_err, report)` for the miniature model.
#[pyfunction]
#[pyo3(signature = (probes = 240, seed = 0))]
fn gradcheck(probes: usize, seed: u64) -> PyResult<(bool, f64, String)> {
    let cfg = GradcheckConfig { probes, seed, ..GradcheckConfig::default() };
    let r = run_gradcheck(&lrfpn::ModelConfig::miniature(), &cfg).map_err(to_py)?;
    Ok((r.passed(), r.max_rel_err(), r.render()))
}

/// `(passed, report)`.
#[pyfunction]
#[pyo3(signature = (cases = 100, seed = 0))]
fn oracle(cases: usize, seed: u64) -> PyResult<(bool, String)> {
    let r = run_oracle(cases, seed).map_err(to_py)?;
    Ok((r.passed(), r.render()))
}

/// `(image, heatmap)` of one synthetic scene.
#[pyfunction]
#[pyo3(signature = (seed, image_size = 64))]
fn scene(seed: u64, image_size: usize) -> PyResult<(PyTensor, PyTensor)> {
    let spec = SceneSpec { image_size, ..SceneSpec::default() };
    let s = gen_scene(&spec, seed).map_err(to_py)?;
    Ok((wrap(s.image), wrap(s.heatmap)))
}

#[pyfunction]
#[pyo3(signature = (input, kernel, bias = None, stride = 1, padding = 0, path = "optimized"))]
fn conv2d(input: &PyTensor, kernel: &PyTensor, bias: Option<PyTensor>, stride: usize, padding: usize, path: &str) -> PyResult<PyTensor> {
    let path: ConvPath = path.parse().map_err(PyValueError::new_err)?;
    kernels::conv2d(&input.inner, &kernel.inner, bias.as_ref().map(|b| &b.inner), stride, padding, path)
        .map(wrap)
        .map_err(to_py)
}

#[pyfunction]
fn depthwise_conv2d(input: &PyTensor, kernel: &PyTensor, dilation: usize, padding: usize) -> PyResult<PyTensor> {
    kernels::depthwise_conv2d(&input.inner, &kernel.inner, dilation, padding).map(wrap).map_err(to_py)
}

#[pyfunction]
fn adaptive_avg_pool(input: &PyTensor, out_h: usize, out_w: usize) -> PyResult<PyTensor> {
    kernels::adaptive_avg_pool(&input.inner, out_h, out_w).map(wrap).map_err(to_py)
}

#[pyfunction]
fn adaptive_max_pool(input: &PyTensor, out_h: usize, out_w: usize) -> PyResult<PyTensor> {
    kernels::adaptive_max_pool(&input.inner, out_h, out_w).map(|m| wrap(m.output)).map_err(to_py)
}

#[pymodule]
fn lrfpn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyFlags>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    m.add_function(wrap_pyfunction!(scene, m)?)?;
    m.add_function(wrap_pyfunction!(conv2d, m)?)?;
    m.add_function(wrap_pyfunction!(depthwise_conv2d, m)?)?;
    m.add_function(wrap_pyfunction!(adaptive_avg_pool, m)?)?;
    m.add_function(wrap_pyfunction!(adaptive_max_pool, m)?)?;
    Ok(())
}
