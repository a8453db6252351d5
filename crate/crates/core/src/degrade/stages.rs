use super::{BlurConfig, Range, CHROMA_RHO};
use crate::error::{Error, Result};
use crate::media::{clamp_unit_value, rgb_to_ycbcr_px, ycbcr_to_rgb_px, ColorSpace, VideoClip};
use ndarray::{Array2, Array4, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

fn uniform_in(rng: &mut ChaCha8Rng, (lo, hi): Range) -> f64 {
    let u: f64 = rng.random();
    lo + u * (hi - lo)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn require_rgb(clip: &VideoClip, op: &str) -> Result<()> {
    if clip.color_space != ColorSpace::Rgb || clip.channels() != 3 {
        return Err(Error::InvalidInput(format!("{op} expects a 3-channel RGB clip")));
    }
    Ok(())
}

pub(crate) fn replace_data(clip: &VideoClip, data: Array4<f64>) -> VideoClip {
    VideoClip { data, frame_rate: clip.frame_rate, color_space: clip.color_space }
}

pub(crate) fn clamped(clip: &VideoClip, data: Array4<f64>) -> VideoClip {
    replace_data(clip, data.mapv(clamp_unit_value))
}

/// One gain per frame, each uniform on `range`.
pub fn sample_exposure_gains(t: usize, range: Range, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..t).map(|_| uniform_in(rng, range)).collect()
}

/// `x + sqrt(λ_s·x + σ_r²)·n` without the final clamp.
pub fn sensor_noise_unclamped(data: &Array4<f64>, shot: f64, read: f64, rng: &mut ChaCha8Rng) -> Result<Array4<f64>> {
    if shot < 0.0 || read < 0.0 {
        return Err(Error::Range(format!("noise scales must be non-negative, got shot={shot} read={read}")));
    }
    let mut out = data.clone();
    let r2 = read * read;
    for v in out.iter_mut() {
        let std = (shot * v.max(0.0) + r2).sqrt();
        *v += std * normal(rng);
    }
    Ok(out)
}

pub fn apply_sensor_noise(clip: &VideoClip, shot: f64, read: f64, rng: &mut ChaCha8Rng) -> Result<VideoClip> {
    let data = sensor_noise_unclamped(&clip.data, shot, read, rng)?;
    Ok(clamped(clip, data))
}

/// L2 norm of the binomial kernel `[1,2,1]ᵀ[1,2,1]/16`.
pub const GRAIN_KERNEL_NORM: f64 = 0.375;

const BINOMIAL: [f64; 3] = [0.25, 0.5, 0.25];

/// Spatially correlated field with marginal std `std`: white noise blurred
/// by the binomial kernel, pre-scaled by `1/‖k‖₂`.
pub fn grain_field(h: usize, w: usize, std: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let scale = std / GRAIN_KERNEL_NORM;
    let white = Array2::from_shape_simple_fn((h + 2, w + 2), || normal(rng));
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (di, ki) in BINOMIAL.iter().enumerate() {
                for (dj, kj) in BINOMIAL.iter().enumerate() {
                    acc += ki * kj * white[[i + di, j + dj]];
                }
            }
            out[[i, j]] = scale * acc;
        }
    }
    out
}

pub(crate) fn grain_delta(data: &Array4<f64>, std: f64, rng: &mut ChaCha8Rng) -> Array4<f64> {
    let (t, c, h, w) = data.dim();
    let mut out = Array4::zeros((t, c, h, w));
    for f in 0..t {
        let field = grain_field(h, w, std, rng);
        for ch in 0..c {
            out.index_axis_mut(Axis(0), f).index_axis_mut(Axis(0), ch).assign(&field);
        }
    }
    out
}

/// Adds one grain field per frame, shared across channels.
pub fn apply_grain(clip: &VideoClip, std: f64, rng: &mut ChaCha8Rng) -> Result<VideoClip> {
    if std < 0.0 {
        return Err(Error::Range(format!("grain std must be non-negative, got {std}")));
    }
    let delta = grain_delta(&clip.data, std, rng);
    Ok(clamped(clip, &clip.data + &delta))
}

/// Stationary AR(1) sequence `x_t = ρ·x_{t−1} + ε_t` with marginal std `std`.
pub fn ar1_sequence(n: usize, rho: f64, std: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let innov = std * (1.0 - rho * rho).max(0.0).sqrt();
    let mut out = Vec::with_capacity(n);
    let mut x = 0.0;
    for i in 0..n {
        let e = normal(rng);
        x = if i == 0 { std * e } else { rho * x + innov * e };
        out.push(x);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlickerDraw {
    pub triggered: bool,
    pub rho: f64,
    /// Per-frame multiplicative deviation `g_t`.
    pub gains: Vec<f64>,
    /// Per-frame additive offset `o_t`.
    pub offsets: Vec<f64>,
}

pub(crate) fn draw_flicker(
    t: usize,
    prob: f64,
    rho_range: Range,
    gain_std: f64,
    offset_std: f64,
    rng: &mut ChaCha8Rng,
) -> FlickerDraw {
    let u: f64 = rng.random();
    let rho = uniform_in(rng, rho_range);
    let gains = ar1_sequence(t, rho, gain_std, rng);
    let offsets = ar1_sequence(t, rho, offset_std, rng);
    let triggered = u < prob;
    if triggered {
        FlickerDraw { triggered, rho, gains, offsets }
    } else {
        FlickerDraw { triggered, rho, gains: vec![0.0; t], offsets: vec![0.0; t] }
    }
}

/// Frame `t` becomes `(1+g_t)·x + o_t` when the clip is selected.
pub fn apply_flicker(
    clip: &VideoClip,
    prob: f64,
    rho_range: Range,
    gain_std: f64,
    offset_std: f64,
    rng: &mut ChaCha8Rng,
) -> (VideoClip, FlickerDraw) {
    let draw = draw_flicker(clip.frames(), prob, rho_range, gain_std, offset_std, rng);
    if !draw.triggered {
        return (clip.clone(), draw);
    }
    let mut data = clip.data.clone();
    for (f, mut frame) in data.axis_iter_mut(Axis(0)).enumerate() {
        let (g, o) = (draw.gains[f], draw.offsets[f]);
        frame.mapv_inplace(|x| (1.0 + g) * x + o);
    }
    (clamped(clip, data), draw)
}

/// Per-frame `(ΔCb, ΔCr)` offsets from two independent AR(1) sequences.
pub fn chroma_drift_offsets(t: usize, std: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let cb = ar1_sequence(t, CHROMA_RHO, std, rng);
    let cr = ar1_sequence(t, CHROMA_RHO, std, rng);
    cb.into_iter().zip(cr).map(|(a, b)| [a, b]).collect()
}

/// Shifts Cb/Cr per frame through a YCbCr round trip, no clamp.
pub fn add_chroma_offsets(data: &Array4<f64>, offsets: &[[f64; 2]]) -> Array4<f64> {
    let (t, _, h, w) = data.dim();
    let mut out = data.clone();
    for f in 0..t {
        let [dcb, dcr] = offsets[f];
        for i in 0..h {
            for j in 0..w {
                let px = [data[[f, 0, i, j]], data[[f, 1, i, j]], data[[f, 2, i, j]]];
                let mut ycc = rgb_to_ycbcr_px(px);
                ycc[1] += dcb;
                ycc[2] += dcr;
                let rgb = ycbcr_to_rgb_px(ycc);
                for c in 0..3 {
                    out[[f, c, i, j]] = rgb[c];
                }
            }
        }
    }
    out
}

pub fn apply_chroma_drift(clip: &VideoClip, std: f64, rng: &mut ChaCha8Rng) -> Result<(VideoClip, Vec<[f64; 2]>)> {
    require_rgb(clip, "apply_chroma_drift")?;
    if std < 0.0 {
        return Err(Error::Range(format!("chroma std must be non-negative, got {std}")));
    }
    if std == 0.0 {
        return Ok((clip.clone(), vec![[0.0; 2]; clip.frames()]));
    }
    let offsets = chroma_drift_offsets(clip.frames(), std, rng);
    let data = add_chroma_offsets(&clip.data, &offsets);
    Ok((clamped(clip, data), offsets))
}

/// Normalized 1-D Gaussian truncated at `ceil(3σ)`; a delta for `σ ≤ 0`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur of every plane with replicate padding.
pub fn gaussian_blur(data: &Array4<f64>, sigma: f64) -> Array4<f64> {
    let k = gaussian_kernel(sigma);
    if k.len() == 1 {
        return data.clone();
    }
    let r = (k.len() / 2) as isize;
    let (t, c, h, w) = data.dim();
    let mut out = Array4::zeros((t, c, h, w));
    let mut tmp = Array2::<f64>::zeros((h, w));
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    for f in 0..t {
        for ch in 0..c {
            let plane = data.index_axis(Axis(0), f);
            let plane = plane.index_axis(Axis(0), ch);
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for (o, kv) in k.iter().enumerate() {
                        acc += kv * plane[[i, clampi(j as isize + o as isize - r, w)]];
                    }
                    tmp[[i, j]] = acc;
                }
            }
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for (o, kv) in k.iter().enumerate() {
                        acc += kv * tmp[[clampi(i as isize + o as isize - r, h), j]];
                    }
                    out[[f, ch, i, j]] = acc;
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlurDraw {
    pub triggered: bool,
    pub sigma: f64,
}

pub(crate) fn draw_blur(cfg: &BlurConfig, rng: &mut ChaCha8Rng) -> BlurDraw {
    let u: f64 = rng.random();
    let sigma = uniform_in(rng, cfg.sigma_range);
    BlurDraw { triggered: u < cfg.prob, sigma }
}

pub fn apply_blur(clip: &VideoClip, cfg: &BlurConfig, rng: &mut ChaCha8Rng) -> (VideoClip, BlurDraw) {
    let draw = draw_blur(cfg, rng);
    if !draw.triggered {
        return (clip.clone(), draw);
    }
    (replace_data(clip, gaussian_blur(&clip.data, draw.sigma)), draw)
}
