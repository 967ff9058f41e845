//! Python bindings for the fogroute library.
//!
//! Images cross the boundary as flat row-major RGB lists of floats in [0, 1];
//! transmission maps as flat lists of floats.

use std::path::PathBuf;

use fogroute::fogsim::{self, AirlightMode, AtmosphericLight, SynthOptions};
use fogroute::hden::{self, FogLevel, HazeDensityScore, RoutingThresholds};
use fogroute::image::{RgbImage, TransmissionMap};
use fogroute::losses::{self, GammaSchedule, PerceptualWeights};
use fogroute::pipeline::{self, TrainConfig, TrainState};
use fogroute::unfold::{self, BranchKind, BranchSet};
use fogroute::{bench, codec, metrics, Error};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Io { .. } | Error::Codec { .. } | Error::Format { .. } => PyOSError::new_err(msg),
        Error::Invariant(_) => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for fogroute::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn level_name(l: FogLevel) -> &'static str {
    match l {
        FogLevel::Light => "Light",
        FogLevel::Medium => "Medium",
        FogLevel::Heavy => "Heavy",
    }
}

fn parse_level(s: Option<&str>) -> PyResult<Option<FogLevel>> {
    s.map(|s| s.parse::<FogLevel>()).transpose().py()
}

/// RGB image with channels in [0, 1].
#[pyclass(name = "Image", module = "fogroute", skip_from_py_object, frozen)]
#[derive(Clone)]
pub struct PyImage {
    inner: RgbImage,
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(width: usize, height: usize, data: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: RgbImage::new(width, height, data).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: codec::load_image(path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        codec::save_image(&self.inner, path).py()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn to_list(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn psnr(&self, other: &PyImage) -> PyResult<f64> {
        metrics::psnr(&self.inner, &other.inner).py()
    }

    fn ssim(&self, other: &PyImage) -> PyResult<f64> {
        metrics::ssim(&self.inner, &other.inner).py()
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.inner.width(), self.inner.height())
    }
}

fn trans(width: usize, height: usize, t: Vec<f64>) -> PyResult<TransmissionMap> {
    TransmissionMap::new(width, height, t).py()
}

/// `t = max(exp(-beta * depth), floor)` for a flat depth list in meters.
#[pyfunction]
fn compute_transmission(width: usize, height: usize, depth: Vec<f64>, beta: f64) -> PyResult<Vec<f64>> {
    let d = fogroute::DepthMap::new(width, height, depth).py()?;
    let b = fogroute::ScatterCoefficient::new(beta).py()?;
    Ok(fogsim::compute_transmission(&d, b).py()?.data().to_vec())
}

#[pyfunction]
fn synthesize_haze(clear: &PyImage, t: Vec<f64>, airlight: f64) -> PyResult<PyImage> {
    let t = trans(clear.inner.width(), clear.inner.height(), t)?;
    let a = AtmosphericLight::gray(airlight).py()?;
    Ok(PyImage {
        inner: fogsim::synthesize_haze(&clear.inner, &t, a).py()?,
    })
}

#[pyfunction]
fn invert_haze(hazy: &PyImage, t: Vec<f64>, airlight: f64) -> PyResult<PyImage> {
    let t = trans(hazy.inner.width(), hazy.inner.height(), t)?;
    let a = AtmosphericLight::gray(airlight).py()?;
    Ok(PyImage {
        inner: fogsim::invert_haze(&hazy.inner, &t, a).py()?,
    })
}

/// Synthesizes the fog dataset for a pair list; returns the number of images.
#[pyfunction]
#[pyo3(signature = (pairs, out_dir, seed, meters_per_unit = 0.01, airlight = None))]
fn generate_dataset(
    pairs: PathBuf,
    out_dir: PathBuf,
    seed: u64,
    meters_per_unit: f64,
    airlight: Option<f64>,
) -> PyResult<usize> {
    let mut opts = SynthOptions {
        seed,
        meters_per_unit,
        ..Default::default()
    };
    if let Some(a) = airlight {
        opts.airlight = AirlightMode::Fixed(AtmosphericLight::gray(a).py()?);
    }
    let list = fogsim::read_pair_list(pairs).py()?;
    Ok(fogsim::generate_dataset(&list, out_dir, &opts).py()?.entries.len())
}

/// Writes `count` procedural clear scenes with depth; returns the pair list path.
#[pyfunction]
fn write_scene_set(dir: PathBuf, count: usize, width: usize, height: usize, seed: u64) -> PyResult<PathBuf> {
    fogroute::scenes::write_scene_set(dir, count, width, height, seed).py()
}

/// Density estimator head.
#[pyclass(name = "HdenParams", module = "fogroute", skip_from_py_object)]
#[derive(Clone)]
pub struct PyHden {
    inner: hden::HdenParams,
}

#[pymethods]
impl PyHden {
    #[staticmethod]
    fn zeros() -> Self {
        Self {
            inner: hden::HdenParams::zeros(),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: hden::HdenParams::load(path).py()?,
        })
    }

    /// Fits the head on two manifests; returns (params, final validation accuracy).
    #[staticmethod]
    #[pyo3(signature = (train, val, epochs = 400, lr = 2.0))]
    fn train(train: PathBuf, val: PathBuf, epochs: usize, lr: f64) -> PyResult<(Self, f64)> {
        let tr = fogsim::DatasetManifest::load(train).py()?;
        let va = fogsim::DatasetManifest::load(val).py()?;
        let (inner, report) = hden::train_hden(&tr, &va, epochs, lr).py()?;
        let acc = report.epochs.last().map_or(0.0, |e| e.val_accuracy);
        Ok((Self { inner }, acc))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).py()
    }

    fn estimate(&self, image: &PyImage) -> PyResult<f64> {
        Ok(hden::estimate_density(&image.inner, &self.inner).py()?.value())
    }
}

/// Fog level for a density score; Medium includes both thresholds.
#[pyfunction]
#[pyo3(signature = (d, alpha = 1.0 / 3.0, beta_thr = 2.0 / 3.0))]
fn classify_level(d: f64, alpha: f64, beta_thr: f64) -> PyResult<&'static str> {
    let thr = RoutingThresholds::new(alpha, beta_thr).py()?;
    Ok(level_name(hden::classify_level(HazeDensityScore::new(d).py()?, &thr)))
}

fn result_dict<'py>(py: Python<'py>, r: &unfold::DehazeResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("image", PyImage { inner: r.j_out.clone() })?;
    d.set_item("transmission", r.t_out.data().to_vec())?;
    d.set_item("airlight", r.airlight.rgb().to_vec())?;
    d.set_item("initial_residual", r.initial_residual)?;
    d.set_item("residual_trace", r.residual_trace.clone())?;
    Ok(d)
}

/// The three unfolding branches.
#[pyclass(name = "Branches", module = "fogroute", skip_from_py_object)]
#[derive(Clone)]
pub struct PyBranches {
    inner: BranchSet,
}

#[pymethods]
impl PyBranches {
    #[new]
    fn new() -> Self {
        Self {
            inner: BranchSet::default(),
        }
    }

    #[staticmethod]
    fn load_dir(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: BranchSet::load_dir(path).py()?,
        })
    }

    fn save_dir(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_dir(path).py()
    }

    /// Runs the branch for `level` ("Light", "Medium", "Heavy" or L/M/H).
    fn dehaze<'py>(&self, py: Python<'py>, image: &PyImage, level: &str) -> PyResult<Bound<'py, PyDict>> {
        let level = parse_level(Some(level))?.expect("level given");
        let r = unfold::dehaze(&image.inner, self.inner.for_level(level)).py()?;
        result_dict(py, &r)
    }

    /// Closed-form operation count of each branch at the given size.
    fn estimate_ops(&self, width: usize, height: usize) -> Vec<u64> {
        BranchKind::ALL
            .iter()
            .map(|&k| bench::estimate_ops(self.inner.get(k), width, height))
            .collect()
    }
}

/// Trained density head, branches and thresholds.
#[pyclass(name = "TrainState", module = "fogroute")]
pub struct PyTrainState {
    inner: TrainState,
}

#[pymethods]
impl PyTrainState {
    #[staticmethod]
    fn load_dir(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: TrainState::load_dir(path).py()?,
        })
    }

    fn save_dir(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_dir(path).py()
    }

    #[getter]
    fn hden(&self) -> PyHden {
        PyHden {
            inner: self.inner.hden.clone(),
        }
    }

    #[getter]
    fn branches(&self) -> PyBranches {
        PyBranches {
            inner: self.inner.branches.clone(),
        }
    }

    /// Per-epoch losses as a list of dicts.
    fn history(&self, py: Python<'_>) -> PyResult<Vec<Py<PyDict>>> {
        self.inner
            .loss_history
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("epoch", r.epoch)?;
                d.set_item("total", r.train.total)?;
                d.set_item("gamma", r.train.gamma)?;
                d.set_item("val_total", r.val_total)?;
                Ok(d.unbind())
            })
            .collect()
    }

    /// Scores the image, routes it and restores it.
    #[pyo3(signature = (image, force_level = None))]
    fn dehaze<'py>(&self, py: Python<'py>, image: &PyImage, force_level: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
        let force = parse_level(force_level)?;
        let s = &self.inner;
        let r = unfold::route_and_dehaze(&image.inner, &s.hden, &s.thresholds, &s.branches, force).py()?;
        let d = result_dict(py, &r.result)?;
        d.set_item("d", r.density.value())?;
        d.set_item("level", level_name(r.level))?;
        Ok(d)
    }
}

/// Trains on two manifests. `config` is an optional JSON string of training
/// settings; unspecified fields keep their defaults.
#[pyfunction]
#[pyo3(signature = (train, val, config = None))]
fn train(py: Python<'_>, train: PathBuf, val: PathBuf, config: Option<&str>) -> PyResult<PyTrainState> {
    let cfg: TrainConfig = match config {
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => TrainConfig::default(),
    };
    let tr = fogsim::DatasetManifest::load(train).py()?;
    let va = fogsim::DatasetManifest::load(val).py()?;
    let run = py.detach(|| pipeline::train(&cfg, &tr, &va)).py()?;
    Ok(PyTrainState { inner: run.state })
}

/// Evaluates every term of the training objective for one image.
#[pyfunction]
#[pyo3(signature = (j_out, t_out, j_gt, hazy, d, hden))]
fn adaptive_loss<'py>(
    py: Python<'py>,
    j_out: &PyImage,
    t_out: Vec<f64>,
    j_gt: &PyImage,
    hazy: &PyImage,
    d: f64,
    hden: &PyHden,
) -> PyResult<Bound<'py, PyDict>> {
    let t = trans(j_out.inner.width(), j_out.inner.height(), t_out)?;
    let r = losses::adaptive_loss(
        &j_out.inner,
        &t,
        &j_gt.inner,
        &hazy.inner,
        HazeDensityScore::new(d).py()?,
        &GammaSchedule::default(),
        &PerceptualWeights::default(),
        &hden.inner,
    )
    .py()?;
    let out = PyDict::new(py);
    out.set_item("coh", r.coh)?;
    out.set_item("contra_rec", r.contra_rec)?;
    out.set_item("dens", r.dens)?;
    out.set_item("gamma", r.gamma)?;
    out.set_item("total", r.total)?;
    Ok(out)
}

#[pymodule]
#[pyo3(name = "fogroute")]
fn fogroute_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("T_FLOOR", fogroute::T_FLOOR)?;
    m.add_class::<PyImage>()?;
    m.add_class::<PyHden>()?;
    m.add_class::<PyBranches>()?;
    m.add_class::<PyTrainState>()?;
    m.add_function(wrap_pyfunction!(compute_transmission, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_haze, m)?)?;
    m.add_function(wrap_pyfunction!(invert_haze, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(write_scene_set, m)?)?;
    m.add_function(wrap_pyfunction!(classify_level, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(adaptive_loss, m)?)?;
    Ok(())
}
