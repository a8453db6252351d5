//! Python bindings: clips are `float64` arrays of shape `(T, C, H, W)`,
//! frames `(C, H, W)`.

use ::gpvd::cli::resolve_config;
use ::gpvd::degrade::{config_at_severity, synthesize_degraded_clip};
use ::gpvd::evaluation::{chroma_flicker as flicker, psnr as psnr_rs, ssim as ssim_rs};
use ::gpvd::media::{self, ColorSpace, FrameImage, VideoClip};
use ::gpvd::network::{load_checkpoint, save_checkpoint, Model as CoreModel, Variant};
use ::gpvd::objective::{self, LossWeights};
use ::gpvd::tiling::{plan_tiles, restore_video, tiled_inference};
use numpy::{IntoPyArray, PyArray2, PyArray3, PyArray4, PyReadonlyArray3, PyReadonlyArray4};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::collections::BTreeMap;
use std::path::PathBuf;

fn err(e: ::gpvd::Error) -> PyErr {
    match e {
        ::gpvd::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn clip_of(a: PyReadonlyArray4<'_, f64>, cs: ColorSpace) -> PyResult<VideoClip> {
    VideoClip::new(a.as_array().to_owned(), cs).map_err(err)
}

fn frame_of(a: PyReadonlyArray3<'_, f64>) -> PyResult<FrameImage> {
    FrameImage::new(a.as_array().to_owned(), ColorSpace::Rgb).map_err(err)
}

/// Resolves `key=value` overrides over the built-in defaults.
fn config(overrides: Option<Vec<String>>) -> PyResult<::gpvd::cli::RunConfig> {
    Ok(resolve_config(None, &overrides.unwrap_or_default()).map_err(err)?.config)
}

#[pyfunction]
fn rgb_to_ycbcr<'py>(py: Python<'py>, clip: PyReadonlyArray4<'py, f64>) -> PyResult<Bound<'py, PyArray4<f64>>> {
    let c = media::rgb_to_ycbcr(&clip_of(clip, ColorSpace::Rgb)?).map_err(err)?;
    Ok(c.data.into_pyarray(py))
}

#[pyfunction]
fn ycbcr_to_rgb<'py>(py: Python<'py>, clip: PyReadonlyArray4<'py, f64>) -> PyResult<Bound<'py, PyArray4<f64>>> {
    let c = media::ycbcr_to_rgb(&clip_of(clip, ColorSpace::YCbCr)?).map_err(err)?;
    Ok(c.data.into_pyarray(py))
}

#[pyfunction]
#[pyo3(signature = (frames, height, width, seed=0))]
fn synthetic_clip(py: Python<'_>, frames: usize, height: usize, width: usize, seed: u64) -> PyResult<Bound<'_, PyArray4<f64>>> {
    Ok(media::synthetic_clip(frames, height, width, seed).map_err(err)?.data.into_pyarray(py))
}

/// Degrades a clean clip at `severity`; returns the noisy clip and a JSON
/// record of every sampled value.
#[pyfunction]
#[pyo3(signature = (clip, severity=2.0, seed=0))]
fn degrade<'py>(
    py: Python<'py>,
    clip: PyReadonlyArray4<'py, f64>,
    severity: f64,
    seed: u64,
) -> PyResult<(Bound<'py, PyArray4<f64>>, String)> {
    let clean = clip_of(clip, ColorSpace::Rgb)?;
    let cfg = config_at_severity(severity, seed).map_err(err)?;
    let (noisy, rec) = py.detach(|| synthesize_degraded_clip(&clean, &cfg)).map_err(err)?;
    let json = serde_json::to_string(&rec).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((noisy.data.into_pyarray(py), json))
}

#[pyfunction]
fn psnr(a: PyReadonlyArray3<'_, f64>, b: PyReadonlyArray3<'_, f64>) -> PyResult<f64> {
    if a.as_array().dim() != b.as_array().dim() {
        return Err(PyValueError::new_err("psnr: shapes differ"));
    }
    Ok(psnr_rs(&a.as_array(), &b.as_array()))
}

#[pyfunction]
fn ssim(a: PyReadonlyArray3<'_, f64>, b: PyReadonlyArray3<'_, f64>) -> PyResult<f64> {
    let (a, b) = (frame_of(a)?, frame_of(b)?);
    if a.data.dim() != b.data.dim() {
        return Err(PyValueError::new_err("ssim: shapes differ"));
    }
    Ok(ssim_rs(&a, &b))
}

#[pyfunction]
fn chroma_flicker(clip: PyReadonlyArray4<'_, f64>) -> PyResult<f64> {
    Ok(flicker(&clip_of(clip, ColorSpace::Rgb)?))
}

/// Per-pixel Charbonnier penalty averaged over the frame.
#[pyfunction]
#[pyo3(signature = (pred, target, eps=1e-3))]
fn charbonnier(pred: PyReadonlyArray3<'_, f64>, target: PyReadonlyArray3<'_, f64>, eps: f64) -> PyResult<f64> {
    if pred.as_array().dim() != target.as_array().dim() {
        return Err(PyValueError::new_err("charbonnier: shapes differ"));
    }
    let m = objective::charbonnier(&pred.as_array().to_owned(), &target.as_array().to_owned(), eps);
    Ok(m.mean().unwrap_or(0.0))
}

/// Tile rectangles `(y0, x0, y1, x1)` covering an `height × width` frame.
#[pyfunction]
#[pyo3(signature = (height, width, tile=640, overlap=64))]
fn tile_plan(height: usize, width: usize, tile: usize, overlap: usize) -> PyResult<Vec<(usize, usize, usize, usize)>> {
    let plan = plan_tiles(height, width, tile, overlap).map_err(err)?;
    Ok(plan.tiles.iter().map(|t| (t.y0, t.x0, t.y1, t.x1)).collect())
}

#[pyfunction]
fn variants() -> Vec<String> {
    Variant::ALL.iter().map(|v| v.label().to_string()).collect()
}

#[pyfunction]
fn default_config() -> String {
    ::gpvd::cli::defaults_toml()
}

/// A restoration network with its parameters.
#[pyclass(module = "gpvd")]
struct Model {
    inner: CoreModel,
}

#[pymethods]
impl Model {
    /// `overrides` are `key=value` strings such as `"model.base_width=8"`.
    #[new]
    #[pyo3(signature = (overrides=None, seed=0))]
    fn new(overrides: Option<Vec<String>>, seed: u64) -> PyResult<Self> {
        let cfg = config(overrides)?;
        Ok(Self { inner: CoreModel::new(cfg.model, seed).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: load_checkpoint(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.inner, &path, BTreeMap::new()).map_err(err)
    }

    /// Number of trainable scalars.
    fn census(&self) -> usize {
        self.inner.census()
    }

    #[getter]
    fn clip_len(&self) -> usize {
        self.inner.cfg.clip_len
    }

    #[getter]
    fn size_multiple(&self) -> usize {
        self.inner.cfg.size_multiple()
    }

    /// Restores the centre frame; returns `(frame, log_variance)`.
    fn forward<'py>(
        &self,
        py: Python<'py>,
        clip: PyReadonlyArray4<'py, f64>,
    ) -> PyResult<(Bound<'py, PyArray3<f64>>, Bound<'py, PyArray2<f64>>)> {
        let c = clip_of(clip, ColorSpace::Rgb)?;
        let out = py.detach(|| self.inner.forward(&c)).map_err(err)?;
        Ok((out.restored.data.into_pyarray(py), out.log_variance.into_pyarray(py)))
    }

    /// Tiled restoration of the centre frame.
    #[pyo3(signature = (clip, tile=640, overlap=64, workers=1))]
    fn restore_frame<'py>(
        &self,
        py: Python<'py>,
        clip: PyReadonlyArray4<'py, f64>,
        tile: usize,
        overlap: usize,
        workers: usize,
    ) -> PyResult<Bound<'py, PyArray3<f64>>> {
        let c = clip_of(clip, ColorSpace::Rgb)?;
        let plan = plan_tiles(c.height(), c.width(), tile, overlap).map_err(err)?;
        let out = py.detach(|| tiled_inference(&self.inner, &c, &plan, workers)).map_err(err)?;
        Ok(out.frame.data.into_pyarray(py))
    }

    /// Restores every frame using a sliding window of `clip_len` frames.
    #[pyo3(signature = (clip, tile=640, overlap=64, workers=1))]
    fn restore<'py>(
        &self,
        py: Python<'py>,
        clip: PyReadonlyArray4<'py, f64>,
        tile: usize,
        overlap: usize,
        workers: usize,
    ) -> PyResult<Bound<'py, PyArray4<f64>>> {
        let c = clip_of(clip, ColorSpace::Rgb)?;
        let plan = plan_tiles(c.height(), c.width(), tile, overlap).map_err(err)?;
        let window = self.inner.cfg.clip_len;
        let out = py.detach(|| restore_video(&self.inner, &c, window, &plan, workers)).map_err(err)?;
        Ok(out.data.into_pyarray(py))
    }

    /// Loss terms of one `(noisy, clean)` pair at the centre frame.
    fn loss<'py>(
        &self,
        py: Python<'py>,
        noisy: PyReadonlyArray4<'py, f64>,
        clean: PyReadonlyArray4<'py, f64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let sample = objective::Sample { noisy: clip_of(noisy, ColorSpace::Rgb)?, clean: clip_of(clean, ColorSpace::Rgb)? };
        let (b, _) = objective::sample_loss(&self.inner, &self.inner.store, &sample, &LossWeights::default(), false)
            .map_err(err)?;
        let d = PyDict::new(py);
        for (k, v) in [("main", b.main), ("hf", b.hf), ("grad", b.grad), ("chr", b.chr), ("total", b.total)] {
            d.set_item(k, v)?;
        }
        Ok(d)
    }

    /// Trains in place on clean clips; `overrides` set `train.*` keys.
    /// Returns one dict per optimizer step.
    #[pyo3(signature = (clips, overrides=None, val_clips=None))]
    fn train<'py>(
        &mut self,
        py: Python<'py>,
        clips: Vec<PyReadonlyArray4<'py, f64>>,
        overrides: Option<Vec<String>>,
        val_clips: Option<Vec<PyReadonlyArray4<'py, f64>>>,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let cfg = config(overrides)?.train;
        let train_set = clips.into_iter().map(|c| clip_of(c, ColorSpace::Rgb)).collect::<PyResult<Vec<_>>>()?;
        let val_set = match val_clips {
            Some(v) => v.into_iter().map(|c| clip_of(c, ColorSpace::Rgb)).collect::<PyResult<Vec<_>>>()?,
            None => train_set.clone(),
        };
        let model = &mut self.inner;
        let report = py.detach(|| objective::train(model, &train_set, &val_set, &cfg, None)).map_err(err)?;
        report
            .history
            .iter()
            .map(|h| {
                let d = PyDict::new(py);
                d.set_item("step", h.step)?;
                d.set_item("epoch", h.epoch)?;
                d.set_item("loss", h.loss.total)?;
                d.set_item("grad_norm", h.grad_norm)?;
                d.set_item("lr", h.lr)?;
                d.set_item("val_psnr", h.val_psnr)?;
                Ok(d)
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("Model(params={}, clip_len={})", self.inner.census(), self.inner.cfg.clip_len)
    }
}

#[pymodule]
#[pyo3(name = "gpvd")]
fn gpvd_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(rgb_to_ycbcr, m)?)?;
    m.add_function(wrap_pyfunction!(ycbcr_to_rgb, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_clip, m)?)?;
    m.add_function(wrap_pyfunction!(degrade, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(chroma_flicker, m)?)?;
    m.add_function(wrap_pyfunction!(charbonnier, m)?)?;
    m.add_function(wrap_pyfunction!(tile_plan, m)?)?;
    m.add_function(wrap_pyfunction!(variants, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    Ok(())
}
