//! Python bindings. Tensors cross the boundary as a flat row-major list plus
//! an `(n, c, h, w)` shape tuple.

use std::path::PathBuf;

use mtrl_core::checkpoint::load_checkpoint;
use mtrl_core::degradation::{degrade as core_degrade, DegradationOp, DegradationSpec};
use mtrl_core::model::{param_count as core_param_count, Model, ModelConfig};
use mtrl_core::{io, metrics, stats, wavelet, ParamStore, Tensor};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

type Shape = (usize, usize, usize, usize);
type Flat = (Vec<f32>, Shape);

fn err(e: mtrl_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn tensor(data: Vec<f32>, shape: Shape) -> PyResult<Tensor> {
    Tensor::new([shape.0, shape.1, shape.2, shape.3], data).map_err(err)
}

fn flat(t: Tensor) -> Flat {
    let [n, c, h, w] = t.dims();
    (t.into_data(), (n, c, h, w))
}

#[pyfunction]
fn load_image(path: PathBuf) -> PyResult<Flat> {
    io::load_image(&path).map(flat).map_err(err)
}

#[pyfunction]
fn save_image(data: Vec<f32>, shape: Shape, path: PathBuf) -> PyResult<()> {
    io::save_image(&tensor(data, shape)?, &path).map_err(err)
}

/// Degrade with the named ops (`light`, `spots`, `blur`, `cataract`) at their
/// default parameter ranges, or with a full JSON spec via `spec_json`.
#[pyfunction]
#[pyo3(signature = (data, shape, ops=None, seed=0, spec_json=None))]
fn degrade(data: Vec<f32>, shape: Shape, ops: Option<Vec<String>>, seed: u64, spec_json: Option<&str>) -> PyResult<Flat> {
    let spec = match (ops, spec_json) {
        (Some(_), Some(_)) => return Err(PyValueError::new_err("pass either ops or spec_json")),
        (_, Some(j)) => DegradationSpec::from_json(j).map_err(err)?,
        (ops, None) => {
            let ops = ops
                .unwrap_or_default()
                .iter()
                .map(|n| DegradationOp::by_name(n))
                .collect::<Result<_, _>>()
                .map_err(err)?;
            DegradationSpec::new(ops, seed)
        }
    };
    core_degrade(&tensor(data, shape)?, &spec).map(flat).map_err(err)
}

#[pyfunction]
fn ssim(a: Vec<f32>, b: Vec<f32>, shape: Shape) -> PyResult<f64> {
    metrics::ssim(&tensor(a, shape)?, &tensor(b, shape)?).map_err(err)
}

#[pyfunction]
fn psnr(a: Vec<f32>, b: Vec<f32>, shape: Shape) -> PyResult<f64> {
    metrics::psnr(&tensor(a, shape)?, &tensor(b, shape)?).map_err(err)
}

/// Packed Haar sub-bands, channels ordered `[A, D1, D2, D3]`.
#[pyfunction]
fn wt_forward(data: Vec<f32>, shape: Shape) -> PyResult<Flat> {
    wavelet::wt_forward_packed(&tensor(data, shape)?).map(flat).map_err(err)
}

#[pyfunction]
fn wt_inverse(data: Vec<f32>, shape: Shape) -> PyResult<Flat> {
    wavelet::wt_inverse_packed(&tensor(data, shape)?).map(flat).map_err(err)
}

/// Parameter count for a model config given as JSON, or the toy config.
#[pyfunction]
#[pyo3(signature = (config_json=None))]
fn param_count(config_json: Option<&str>) -> PyResult<usize> {
    let cfg = match config_json {
        Some(j) => ModelConfig::from_json(j).map_err(err)?,
        None => ModelConfig::toy(),
    };
    Ok(core_param_count(&cfg))
}

#[pyfunction]
fn paired_tests<'py>(py: Python<'py>, a: Vec<f64>, b: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let r = stats::paired_tests(&a, &b).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("n", r.n)?;
    d.set_item("mean_diff", r.mean_diff)?;
    d.set_item("t_stat", r.t_stat)?;
    d.set_item("t_p", r.t_p)?;
    d.set_item("w_plus", r.w_plus)?;
    d.set_item("w_p", r.w_p)?;
    d.set_item("w_method", format!("{:?}", r.w_method).to_lowercase())?;
    Ok(d)
}

/// Run the `mtrl` command line; returns its exit code.
#[pyfunction]
fn cli(args: Vec<String>) -> i32 {
    mtrl_core::cli::run(std::iter::once("mtrl".to_string()).chain(args))
}

/// A trained model loaded from a checkpoint.
#[pyclass(frozen)]
struct Enhancer {
    model: Model,
    params: ParamStore,
}

#[pymethods]
impl Enhancer {
    #[new]
    fn new(ckpt: PathBuf) -> PyResult<Self> {
        let (params, cfg) = load_checkpoint(&ckpt).map_err(err)?;
        let model = Model::new(cfg.model).map_err(err)?;
        Ok(Self { model, params })
    }

    fn enhance(&self, py: Python<'_>, data: Vec<f32>, shape: Shape) -> PyResult<Flat> {
        let x = tensor(data, shape)?;
        py.detach(|| self.model.enhance(&x, &self.params)).map(flat).map_err(err)
    }

    /// Returns `(high_frequency, enhanced)`.
    fn forward(&self, py: Python<'_>, data: Vec<f32>, shape: Shape) -> PyResult<(Flat, Flat)> {
        let x = tensor(data, shape)?;
        let (h, r) = py.detach(|| self.model.forward(&x, &self.params)).map_err(err)?;
        Ok((flat(h), flat(r)))
    }

    #[getter]
    fn param_count(&self) -> usize {
        core_param_count(self.model.config())
    }
}

#[pymodule]
fn mtrl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(load_image, m)?)?;
    m.add_function(wrap_pyfunction!(save_image, m)?)?;
    m.add_function(wrap_pyfunction!(degrade, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(wt_forward, m)?)?;
    m.add_function(wrap_pyfunction!(wt_inverse, m)?)?;
    m.add_function(wrap_pyfunction!(param_count, m)?)?;
    m.add_function(wrap_pyfunction!(paired_tests, m)?)?;
    m.add_function(wrap_pyfunction!(cli, m)?)?;
    m.add_class::<Enhancer>()?;
    Ok(())
}
