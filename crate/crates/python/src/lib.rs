//! Python bindings: tensors, the module pool, metrics, synthetic data,
//! the super-network and fixed pipelines.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ispsearch::data::{self, NoiseParams};
use ispsearch::modules::{apply_original, LearnedModules};
use ispsearch::pipeline::{self, PipelineConfig, RunMode};
use ispsearch::proxy::{ProxyArch, ProxySet};
use ispsearch::supernet::{self, SearchConfig, SearchModules, StepPlan, L2};
use ispsearch::{metrics, Domain, Error, Image, ModuleId, ParamVector};

fn err(e: Error) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn domain(name: &str) -> PyResult<Domain> {
    match name {
        "raw" => Ok(Domain::BayerRaw),
        "srgb" => Ok(Domain::Srgb),
        _ => Err(PyValueError::new_err(format!("unknown domain `{name}` (raw|srgb)"))),
    }
}

fn module(name: &str) -> PyResult<ModuleId> {
    name.parse().map_err(err)
}

/// Height x width x channels float32 image, stored row-major with
/// interleaved channels.
#[pyclass(name = "Tensor", module = "ispsearch_py", from_py_object)]
#[derive(Clone)]
pub struct PyTensor(ispsearch::Tensor);

#[pymethods]
impl PyTensor {
    #[new]
    fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> PyResult<Self> {
        ispsearch::Tensor::from_vec(height, width, channels, data).map(Self).map_err(err)
    }

    #[staticmethod]
    fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self(ispsearch::Tensor::filled(height, width, channels, value))
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        self.0.shape()
    }

    fn to_list(&self) -> Vec<f32> {
        self.0.data().to_vec()
    }

    fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.0.at(y, x, c)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        let (h, w, c) = self.0.shape();
        format!("Tensor({h}x{w}x{c})")
    }
}

/// Names of the 22 pool algorithms followed by `skip`.
#[pyfunction]
fn module_ids() -> Vec<&'static str> {
    ModuleId::all().map(|m| m.as_str()).collect()
}

/// Descriptor of one module as a dict.
#[pyfunction]
fn describe_module<'py>(py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyDict>> {
    let d = module(name)?.descriptor();
    let out = PyDict::new(py);
    let dom = |x: Option<Domain>| x.map(|d| if d == Domain::BayerRaw { "raw" } else { "srgb" });
    out.set_item("id", name)?;
    out.set_item("domain_in", dom(d.domain_in))?;
    out.set_item("domain_out", dom(d.domain_out))?;
    out.set_item("param_count", d.param_count())?;
    out.set_item("differentiable", d.differentiable)?;
    out.set_item("needs_stats", d.needs_stats)?;
    let ranges: Vec<(f32, f32, f32)> = d.params.iter().map(|p| (p.min, p.max, p.default)).collect();
    out.set_item("param_ranges", ranges)?;
    Ok(out)
}

/// Applies the original operator. `params` are normalised to [0, 1];
/// omitted means the descriptor defaults.
#[pyfunction]
#[pyo3(signature = (name, image, domain_name, params=None))]
fn apply_module(name: &str, image: &PyTensor, domain_name: &str, params: Option<Vec<f32>>) -> PyResult<PyTensor> {
    let id = module(name)?;
    let params = params.map(ParamVector).unwrap_or_else(|| id.descriptor().default_params());
    let img = Image::new(domain(domain_name)?, image.0.clone()).map_err(err)?;
    let out = apply_original(id, &img, &params, &LearnedModules::initialised(0, true)).map_err(err)?;
    Ok(PyTensor(out.tensor))
}

#[pyfunction]
fn psnr(a: &PyTensor, b: &PyTensor) -> PyResult<f64> {
    metrics::psnr(&a.0, &b.0).map_err(err)
}

#[pyfunction]
fn psnr_gray(a: &PyTensor, b: &PyTensor) -> PyResult<f64> {
    metrics::psnr_gray(&a.0, &b.0).map_err(err)
}

#[pyfunction]
fn ssim(a: &PyTensor, b: &PyTensor) -> PyResult<f64> {
    metrics::ssim(&a.0, &b.0).map_err(err)
}

/// Underexposed noisy RGGB mosaic of an sRGB image.
#[pyfunction]
#[pyo3(signature = (rgb, ratio, sigma=0.0, poisson_scale=0.0, seed=0))]
fn synthesize_raw(rgb: &PyTensor, ratio: f32, sigma: f32, poisson_scale: f32, seed: u64) -> PyResult<PyTensor> {
    let raw = data::synthesize_raw(&rgb.0, ratio, NoiseParams { sigma, poisson_scale }, seed).map_err(err)?;
    Ok(PyTensor(raw.bayer))
}

#[pyfunction]
fn exposure_compensate(image: &PyTensor, ratio: f32) -> PyTensor {
    PyTensor(data::exposure_compensate(&image.0, ratio))
}

/// `(compensated RAW input, sRGB target)` pairs.
#[pyfunction]
#[pyo3(signature = (count, size, ratio=50.0, sigma=0.002, poisson_scale=0.0005, seed=0))]
fn low_light_dataset(
    count: usize,
    size: usize,
    ratio: f32,
    sigma: f32,
    poisson_scale: f32,
    seed: u64,
) -> PyResult<Vec<(PyTensor, PyTensor)>> {
    let set = data::low_light_dataset(count, size, ratio, NoiseParams { sigma, poisson_scale }, seed).map_err(err)?;
    Ok(set.into_iter().map(|s| (PyTensor(s.input), PyTensor(s.target))).collect())
}

#[pyfunction]
fn load_png(path: &str) -> PyResult<PyTensor> {
    data::load_png(path.as_ref()).map(PyTensor).map_err(err)
}

#[pyfunction]
fn save_png(path: &str, image: &PyTensor) -> PyResult<()> {
    data::save_png(path.as_ref(), &image.0).map_err(err)
}

/// The differentiable super-network over a step plan and module pool.
#[pyclass(name = "SuperNet", module = "ispsearch_py")]
pub struct PySuperNet(supernet::SuperNet);

#[pymethods]
impl PySuperNet {
    /// Builds a network with untrained compact proxies and zero-residual
    /// learned stand-ins, or with proxies loaded from `proxy_dir`.
    #[new]
    #[pyo3(signature = (plan, pool=None, proxy_dir=None, seed=0))]
    fn new(plan: Vec<String>, pool: Option<Vec<String>>, proxy_dir: Option<&str>, seed: u64) -> PyResult<Self> {
        let plan: Vec<StepPlan> = plan.iter().map(|s| s.parse()).collect::<Result<_, _>>().map_err(err)?;
        let pool: Vec<ModuleId> = match pool {
            Some(p) => p.iter().map(|s| module(s)).collect::<PyResult<_>>()?,
            None => ModuleId::ALGORITHMS.to_vec(),
        };
        let proxies = match proxy_dir {
            Some(d) => ProxySet::load_dir(d.as_ref(), &pool),
            None => ProxySet::untrained(&pool, &ProxyArch::compact(), seed),
        }
        .map_err(err)?;
        let modules = SearchModules { proxies, learned: LearnedModules::initialised(seed, true) };
        supernet::SuperNet::new(&plan, &pool, modules).map(Self).map_err(err)
    }

    fn architecture_weight_count(&self) -> usize {
        self.0.architecture_weight_count()
    }

    fn algorithm_param_count(&self) -> usize {
        self.0.algorithm_param_count()
    }

    /// Per step, `(module, weight)` for every slot.
    fn alphas(&self) -> Vec<Vec<(&'static str, f32)>> {
        self.0
            .steps
            .iter()
            .zip(self.0.alphas())
            .map(|(s, a)| s.slots.iter().map(|sl| sl.module.as_str()).zip(a).collect())
            .collect()
    }

    fn set_one_hot(&mut self, step: usize, name: &str) -> PyResult<()> {
        let j = self
            .0
            .slot_index(step, module(name)?)
            .ok_or_else(|| PyValueError::new_err(format!("{name} is not a candidate at step {step}")))?;
        self.0.set_one_hot(step, j);
        Ok(())
    }

    fn forward(&self, input: &PyTensor) -> PyResult<PyTensor> {
        let img = Image::new(self.0.input_domain(), input.0.clone()).map_err(err)?;
        Ok(PyTensor(self.0.forward(&img).map_err(err)?.0.tensor))
    }

    /// Runs the search on `(input, target)` pairs and returns
    /// `(pipeline_json, history_json_lines)`. `config` uses the flat
    /// key=value format.
    #[pyo3(signature = (samples, config=""))]
    fn search(&mut self, samples: Vec<(PyTensor, PyTensor)>, config: &str) -> PyResult<(String, Vec<String>)> {
        let mut cfg = SearchConfig::parse(config).map_err(err)?;
        cfg.plan = self.0.steps.iter().map(|s| s.plan).collect();
        cfg.k = cfg.plan.len();
        let data: Vec<supernet::Sample> = samples
            .into_iter()
            .map(|(x, y)| Ok((Image::new(self.0.input_domain(), x.0).map_err(err)?, y.0)))
            .collect::<PyResult<_>>()?;
        let (net, history) = supernet::search(self.0.clone(), &cfg, &data, &L2).map_err(err)?;
        let pipe = pipeline::extract_pipeline(&net, cfg.seed, &pipeline::stable_hash(&cfg.to_text())).map_err(err)?;
        self.0 = net;
        let lines = history
            .iter()
            .map(serde_json::to_string)
            .collect::<Result<_, _>>()
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok((pipe.to_json().map_err(err)?, lines))
    }
}

/// Runs a pipeline config (JSON text) on an image with the original
/// operators.
#[pyfunction]
fn run_pipeline(config_json: &str, input: &PyTensor) -> PyResult<PyTensor> {
    let cfg = PipelineConfig::from_json(config_json).map_err(err)?;
    let img = Image::new(cfg.input_domain().map_err(err)?, input.0.clone()).map_err(err)?;
    let modules = SearchModules { proxies: ProxySet::default(), learned: LearnedModules::initialised(0, true) };
    let out = pipeline::run_pipeline(&cfg, &img, RunMode::Original, &modules).map_err(err)?;
    Ok(PyTensor(out.tensor))
}

#[pymodule]
fn ispsearch_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PySuperNet>()?;
    m.add_function(wrap_pyfunction!(module_ids, m)?)?;
    m.add_function(wrap_pyfunction!(describe_module, m)?)?;
    m.add_function(wrap_pyfunction!(apply_module, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(psnr_gray, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_raw, m)?)?;
    m.add_function(wrap_pyfunction!(exposure_compensate, m)?)?;
    m.add_function(wrap_pyfunction!(low_light_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(load_png, m)?)?;
    m.add_function(wrap_pyfunction!(save_png, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
