//! Python bindings: `import stegocrack`.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use stegocrack::bayesopt::{optimize as bo_optimize, Acquisition, Dim, SearchSpace};
use stegocrack::experiment::{self, build_sets, DatasetSpec, ExperimentManifest, ImageKind, RunOptions};
use stegocrack::image::{self, to_unit_tensor, RgbImage};
use stegocrack::models::{ModelParams, NetKind};
use stegocrack::stego::{self, BitDepth, Fill};
use stegocrack::training::{self, BitRange, CycleGan, StegoSet};
use stegocrack::Error;

fn py_err(e: Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn depth(bits: u8) -> PyResult<BitDepth> {
    BitDepth::new(bits).map_err(py_err)
}

#[pyclass(name = "Image", module = "stegocrack", skip_from_py_object)]
#[derive(Clone)]
struct PyImage {
    inner: RgbImage,
}

impl PyImage {
    fn wrap(inner: RgbImage) -> Self {
        PyImage { inner }
    }
}

#[pymethods]
impl PyImage {
    /// Row-major interleaved RGB bytes, `height * width * 3` long.
    #[new]
    fn new(height: usize, width: usize, data: Vec<u8>) -> PyResult<Self> {
        RgbImage::new(height, width, data).map(PyImage::wrap).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        image::load_png(&path).map(PyImage::wrap).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        image::save_png(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    fn data<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.inner.data())
    }

    fn pixel(&self, y: usize, x: usize) -> PyResult<(u8, u8, u8)> {
        if y >= self.inner.height() || x >= self.inner.width() {
            return Err(PyValueError::new_err(format!("pixel ({y}, {x}) is outside the image")));
        }
        let [r, g, b] = self.inner.pixel(y, x);
        Ok((r, g, b))
    }

    fn __eq__(&self, other: PyRef<'_, PyImage>) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.inner.height(), self.inner.width())
    }
}

#[pyfunction]
fn encode(cover: PyRef<'_, PyImage>, hidden: PyRef<'_, PyImage>, bits: u8) -> PyResult<PyImage> {
    stego::encode_images(&cover.inner, &hidden.inner, depth(bits)?)
        .map(PyImage::wrap)
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (encoded, bits, fill = "zero"))]
fn decode(encoded: PyRef<'_, PyImage>, bits: u8, fill: &str) -> PyResult<PyImage> {
    Ok(PyImage::wrap(stego::decode_with(&encoded.inner, depth(bits)?, parse_fill(fill)?)))
}

fn parse_fill(s: &str) -> PyResult<Fill> {
    match s {
        "zero" => Ok(Fill::Zero),
        "midpoint" => Ok(Fill::Midpoint),
        other => Err(PyValueError::new_err(format!("unknown fill {other:?}; expected zero or midpoint"))),
    }
}

#[pyfunction]
fn encode_channel(cover: u8, hidden: u8, bits: u8) -> PyResult<u8> {
    Ok(stego::encode_channel(cover, hidden, depth(bits)?))
}

#[pyfunction]
#[pyo3(signature = (encoded, bits, fill = "zero"))]
fn decode_channel(encoded: u8, bits: u8, fill: &str) -> PyResult<u8> {
    Ok(stego::decode_channel_with(encoded, depth(bits)?, parse_fill(fill)?))
}

#[pyfunction]
fn mae(a: PyRef<'_, PyImage>, b: PyRef<'_, PyImage>) -> PyResult<f64> {
    image::mae(&a.inner, &b.inner).map_err(py_err)
}

#[pyfunction]
fn psnr(a: PyRef<'_, PyImage>, b: PyRef<'_, PyImage>) -> PyResult<f64> {
    image::psnr(&a.inner, &b.inner).map_err(py_err)
}

fn images(v: &[RgbImage]) -> Vec<PyImage> {
    v.iter().cloned().map(PyImage::wrap).collect()
}

#[pyclass(name = "Dataset", module = "stegocrack")]
struct PyDataset {
    inner: experiment::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Imports a folder written by `save` or a flat folder of PNGs,
    /// resizing every image to `height` x `width`.
    #[staticmethod]
    #[pyo3(signature = (dir, n_test = 5, height = 32, width = 32))]
    fn load(dir: PathBuf, n_test: usize, height: usize, width: usize) -> PyResult<Self> {
        let spec = DatasetSpec {
            n_test,
            resolution: (height, width),
            ..DatasetSpec::default()
        };
        experiment::import_dataset(&dir, &spec)
            .map(|inner| PyDataset { inner })
            .map_err(py_err)
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        experiment::write_dataset(&self.inner, &dir).map_err(py_err)
    }

    #[getter]
    fn train_covers(&self) -> Vec<PyImage> {
        images(&self.inner.train.covers)
    }

    #[getter]
    fn train_hiddens(&self) -> Vec<PyImage> {
        images(&self.inner.train.hiddens)
    }

    #[getter]
    fn test_covers(&self) -> Vec<PyImage> {
        images(&self.inner.test.covers)
    }

    #[getter]
    fn test_hiddens(&self) -> Vec<PyImage> {
        images(&self.inner.test.hiddens)
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n_train={}, n_test={})",
            self.inner.train.covers.len(),
            self.inner.test.covers.len()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (n_train = 16, n_test = 5, height = 32, width = 32, kind = "mixed", seed = 0))]
fn gen_dataset(n_train: usize, n_test: usize, height: usize, width: usize, kind: &str, seed: u64) -> PyResult<PyDataset> {
    let spec = DatasetSpec {
        n_train,
        n_test,
        resolution: (height, width),
        kind: kind.parse::<ImageKind>().map_err(py_err)?,
        seed,
    };
    experiment::gen_dataset(&spec).map(|inner| PyDataset { inner }).map_err(py_err)
}

#[pyclass(name = "TrainConfig", module = "stegocrack", get_all, set_all, skip_from_py_object)]
#[derive(Clone)]
struct PyTrainConfig {
    lr_g: f64,
    lr_d: f64,
    lambda_cyc: f64,
    lambda_l1: f64,
    batch_size: usize,
    steps: usize,
    seed: u64,
    pretrain_steps: usize,
    epoch_steps: usize,
    noise_dropout: f64,
    base_width: usize,
    depth: usize,
    skip: bool,
}

#[pymethods]
impl PyTrainConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let d = training::TrainConfig::default();
        let mut c = PyTrainConfig {
            lr_g: d.lr_g,
            lr_d: d.lr_d,
            lambda_cyc: d.lambda_cyc,
            lambda_l1: d.lambda_l1,
            batch_size: d.batch_size,
            steps: d.steps,
            seed: d.seed,
            pretrain_steps: d.pretrain_steps,
            epoch_steps: d.epoch_steps,
            noise_dropout: d.noise_dropout,
            base_width: d.base_width,
            depth: d.depth,
            skip: d.skip,
        };
        if let Some(kw) = kwargs {
            let obj = Bound::new(kw.py(), c)?;
            for (k, v) in kw.iter() {
                let name: String = k.extract()?;
                if !obj.hasattr(name.as_str())? {
                    return Err(PyValueError::new_err(format!("unknown TrainConfig field {name:?}")));
                }
                obj.setattr(name.as_str(), v)?;
            }
            c = obj.borrow().clone();
        }
        Ok(c)
    }

    fn __repr__(&self) -> String {
        format!(
            "TrainConfig(lr_g={}, lr_d={}, lambda_cyc={}, batch_size={}, steps={}, seed={}, pretrain_steps={})",
            self.lr_g, self.lr_d, self.lambda_cyc, self.batch_size, self.steps, self.seed, self.pretrain_steps
        )
    }
}

impl PyTrainConfig {
    fn to_core(&self, bits: BitDepth) -> PyResult<training::TrainConfig> {
        let cfg = training::TrainConfig {
            lr_g: self.lr_g,
            lr_d: self.lr_d,
            lambda_cyc: self.lambda_cyc,
            lambda_l1: self.lambda_l1,
            batch_size: self.batch_size,
            steps: self.steps,
            seed: self.seed,
            bits: BitRange::fixed(bits),
            pretrain_steps: self.pretrain_steps,
            epoch_steps: self.epoch_steps,
            noise_dropout: self.noise_dropout,
            base_width: self.base_width,
            depth: self.depth,
            skip: self.skip,
            ..training::TrainConfig::default()
        };
        cfg.validate().map_err(py_err)?;
        Ok(cfg)
    }
}

/// A trained translator. CycleGAN models also carry the inverse generator.
#[pyclass(name = "Model", module = "stegocrack")]
struct PyModel {
    nets: Vec<ModelParams>,
    trace: Option<String>,
}

impl PyModel {
    fn predictor(&self) -> &ModelParams {
        &self.nets[0]
    }
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let nets = ModelParams::load_many(&path).map_err(py_err)?;
        match nets.first().map(|n| n.kind()) {
            Some(NetKind::Generator | NetKind::Autoencoder) => Ok(PyModel { nets, trace: None }),
            _ => Err(PyValueError::new_err(format!("{} holds no generator or autoencoder", path.display()))),
        }
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let refs: Vec<&ModelParams> = self.nets.iter().collect();
        ModelParams::save_many(&path, &refs).map_err(py_err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        match self.predictor().kind() {
            NetKind::Autoencoder => "autoencoder",
            _ => "cyclegan",
        }
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.nets.iter().map(|n| n.num_params()).sum()
    }

    /// Loss trace of the training run as CSV text, if trained in this session.
    #[getter]
    fn trace(&self) -> Option<String> {
        self.trace.clone()
    }

    fn predict(&self, py: Python<'_>, encoded: Vec<PyRef<'_, PyImage>>) -> PyResult<Vec<PyImage>> {
        let inputs: Vec<_> = encoded.iter().map(|i| to_unit_tensor(&i.inner)).collect();
        let net = self.predictor();
        py.detach(|| training::predict(net, &inputs))
            .map(images_owned)
            .map_err(py_err)
    }

    /// Mean `{"mae", "psnr"}` on one split of `dataset` encoded at `bits`.
    #[pyo3(signature = (dataset, bits, split = "test"))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        dataset: PyRef<'_, PyDataset>,
        bits: u8,
        split: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let (train, test) = build_sets(&dataset.inner, depth(bits)?).map_err(py_err)?;
        let set = match split {
            "train" => train,
            "test" => test,
            other => return Err(PyValueError::new_err(format!("unknown split {other:?}"))),
        };
        let net = self.predictor();
        let ev = py.detach(|| training::evaluate(net, &set)).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("mae", ev.mean.mae)?;
        d.set_item("psnr", ev.mean.psnr)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!("Model(kind={:?}, params={})", self.kind(), self.num_params())
    }
}

fn images_owned(v: Vec<RgbImage>) -> Vec<PyImage> {
    v.into_iter().map(PyImage::wrap).collect()
}

fn train_sets(dataset: &PyDataset, bits: u8) -> PyResult<(StegoSet, StegoSet)> {
    build_sets(&dataset.inner, depth(bits)?).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (dataset, bits, config = None))]
fn train_cyclegan(
    py: Python<'_>,
    dataset: PyRef<'_, PyDataset>,
    bits: u8,
    config: Option<PyRef<'_, PyTrainConfig>>,
) -> PyResult<PyModel> {
    let cfg = match config {
        Some(c) => c.to_core(depth(bits)?)?,
        None => PyTrainConfig::new(None)?.to_core(depth(bits)?)?,
    };
    let (train, _) = train_sets(&dataset, bits)?;
    let (state, report) = py
        .detach(|| {
            let mut state = CycleGan::initialized(&cfg, &train)?;
            let report = training::train_cyclegan(&mut state, &train, &cfg)?;
            Ok::<_, Error>((state, report))
        })
        .map_err(py_err)?;
    Ok(PyModel {
        nets: vec![state.g, state.f],
        trace: Some(report.trace.to_csv()),
    })
}

#[pyfunction]
#[pyo3(signature = (dataset, bits, config = None))]
fn train_autoencoder(
    py: Python<'_>,
    dataset: PyRef<'_, PyDataset>,
    bits: u8,
    config: Option<PyRef<'_, PyTrainConfig>>,
) -> PyResult<PyModel> {
    let cfg = match config {
        Some(c) => c.to_core(depth(bits)?)?,
        None => PyTrainConfig::new(None)?.to_core(depth(bits)?)?,
    };
    let (train, test) = train_sets(&dataset, bits)?;
    let (ae, report) = py
        .detach(|| {
            let mut ae = training::new_autoencoder(&cfg, train.resolution())?;
            let report = training::train_autoencoder(&mut ae, &train, Some(&test), &cfg)?;
            Ok::<_, Error>((ae, report))
        })
        .map_err(py_err)?;
    Ok(PyModel {
        nets: vec![ae],
        trace: Some(report.trace.to_csv()),
    })
}

/// Runs an experiment manifest and returns the metrics rows as dicts.
#[pyfunction]
#[pyo3(signature = (manifest, output = None, jobs = 1))]
fn run_manifest<'py>(
    py: Python<'py>,
    manifest: PathBuf,
    output: Option<PathBuf>,
    jobs: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut m = ExperimentManifest::load(&manifest).map_err(py_err)?;
    if let Some(o) = output {
        m.output = o;
    }
    let opts = RunOptions { jobs, wall_clock: false };
    let summary = py.detach(|| experiment::run_manifest(&m, &opts)).map_err(py_err)?;
    summary
        .metrics
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("protocol", r.protocol.to_string())?;
            d.set_item("model", &r.model)?;
            d.set_item("bit_size", r.bit_size)?;
            d.set_item("split", r.split)?;
            d.set_item("mae", r.mae)?;
            d.set_item("psnr", r.psnr)?;
            d.set_item("steps", r.steps)?;
            d.set_item("seed", r.seed)?;
            Ok(d)
        })
        .collect()
}

/// Maximizes `objective(params: dict) -> float` over `space`, a list of
/// `(name, lower, upper, log_scale)` tuples. Exceptions raised by the
/// objective abort the search and propagate.
#[pyfunction]
#[pyo3(signature = (objective, space, budget = 20, init = 5, acq = "ucb", seed = 0))]
fn optimize<'py>(
    py: Python<'py>,
    objective: &Bound<'py, PyAny>,
    space: Vec<(String, f64, f64, bool)>,
    budget: usize,
    init: usize,
    acq: &str,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let dims = space
        .iter()
        .map(|(n, lo, hi, log)| Dim::new(n, *lo, *hi, *log))
        .collect::<Result<Vec<_>, _>>()
        .map_err(py_err)?;
    let space = SearchSpace::new(dims).map_err(py_err)?;
    let acq: Acquisition = acq.parse().map_err(py_err)?;
    let named = |x: &[f64]| -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (dim, v) in space.dims().iter().zip(space.values(x)) {
            d.set_item(&dim.name, v)?;
        }
        Ok(d)
    };
    let mut raised: Option<PyErr> = None;
    let mut f = |x: &[f64]| -> f64 {
        if raised.is_some() {
            return f64::NAN;
        }
        match named(x).and_then(|d| objective.call1((d,))).and_then(|r| r.extract::<f64>()) {
            Ok(y) => y,
            Err(e) => {
                raised = Some(e);
                f64::NAN
            }
        }
    };
    let result = bo_optimize(&mut f, &space, budget, init, acq, seed).map_err(py_err)?;
    if let Some(e) = raised {
        return Err(e);
    }
    let out = PyDict::new(py);
    out.set_item("best_params", named(&result.best_x)?)?;
    out.set_item("best_y", result.best_y)?;
    let history = result
        .history
        .iter()
        .map(|t| {
            let d = PyDict::new(py);
            d.set_item("params", named(&t.x)?)?;
            d.set_item("y", t.y)?;
            d.set_item("best_so_far", t.best_so_far)?;
            d.set_item("initial", t.initial)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    out.set_item("history", history)?;
    Ok(out)
}

#[pymodule(name = "stegocrack")]
fn stegocrack_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(encode_channel, m)?)?;
    m.add_function(wrap_pyfunction!(decode_channel, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(gen_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train_cyclegan, m)?)?;
    m.add_function(wrap_pyfunction!(train_autoencoder, m)?)?;
    m.add_function(wrap_pyfunction!(run_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    Ok(())
}
