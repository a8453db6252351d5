//! Clip and frame containers, YCbCr conversion, clamping and PNG frame
//! directory I/O.
//!
//! Colour conversion is full-range BT.709. Chroma is stored with a +0.5
//! offset so every channel of a YCbCr clip shares the `[0, 1]` range.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use ndarray::{s, Array3, Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// BT.709 red luma weight.
pub const KR: f64 = 0.2126;
/// BT.709 blue luma weight.
pub const KB: f64 = 0.0722;
/// BT.709 green luma weight.
pub const KG: f64 = 1.0 - KR - KB;

/// Forward matrix, rows `(Y, Cb, Cr)` before the chroma offset.
pub const RGB_TO_YCBCR: [[f64; 3]; 3] = [
    [KR, KG, KB],
    [-KR / (2.0 * (1.0 - KB)), -KG / (2.0 * (1.0 - KB)), 0.5],
    [0.5, -KG / (2.0 * (1.0 - KR)), -KB / (2.0 * (1.0 - KR))],
];

/// Exact inverse of [`RGB_TO_YCBCR`], columns `(Y, Cb, Cr)`.
pub const YCBCR_TO_RGB: [[f64; 3]; 3] = [
    [1.0, 0.0, 2.0 * (1.0 - KR)],
    [1.0, -2.0 * (1.0 - KB) * KB / KG, -2.0 * (1.0 - KR) * KR / KG],
    [1.0, 2.0 * (1.0 - KB), 0.0],
];

pub const CHROMA_OFFSET: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColorSpace {
    #[serde(rename = "rgb")]
    Rgb,
    #[serde(rename = "ycbcr")]
    YCbCr,
}

/// Same map as [`RGB_TO_YCBCR`], written in difference form so that grey
/// inputs give `Y = G` and neutral chroma without rounding.
pub fn rgb_to_ycbcr_px(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb;
    let y = g + KR * (r - g) + KB * (b - g);
    [y, (b - y) / (2.0 * (1.0 - KB)) + CHROMA_OFFSET, (r - y) / (2.0 * (1.0 - KR)) + CHROMA_OFFSET]
}

/// Inverse transform without clamping.
pub fn ycbcr_to_rgb_px(ycc: [f64; 3]) -> [f64; 3] {
    let m = &YCBCR_TO_RGB;
    let v = [ycc[0], ycc[1] - CHROMA_OFFSET, ycc[2] - CHROMA_OFFSET];
    let dot = |r: &[f64; 3]| r[0] * v[0] + r[1] * v[1] + r[2] * v[2];
    [dot(&m[0]), dot(&m[1]), dot(&m[2])]
}

pub fn clamp_unit_value(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// `T×C×H×W` intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub data: Array4<f64>,
    pub frame_rate: Option<f64>,
    pub color_space: ColorSpace,
}

/// `C×H×W` intensities of a single frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameImage {
    pub data: Array3<f64>,
    pub color_space: ColorSpace,
}

fn check_dims(c: usize, h: usize, w: usize) -> Result<()> {
    if !(1..=3).contains(&c) {
        return Err(Error::Shape(format!("channel count must be 1..=3, got {c}")));
    }
    if h < 8 || w < 8 {
        return Err(Error::Shape(format!("frames must be at least 8×8, got {h}×{w}")));
    }
    Ok(())
}

impl VideoClip {
    pub fn new(data: Array4<f64>, color_space: ColorSpace) -> Result<Self> {
        let (t, c, h, w) = data.dim();
        if t == 0 {
            return Err(Error::Shape("clip needs at least one frame".into()));
        }
        check_dims(c, h, w)?;
        if color_space == ColorSpace::YCbCr && c != 3 {
            return Err(Error::InvalidInput("YCbCr clips need 3 channels".into()));
        }
        Ok(Self {
            data,
            frame_rate: None,
            color_space,
        })
    }

    pub fn with_frame_rate(mut self, fps: f64) -> Self {
        self.frame_rate = Some(fps);
        self
    }

    pub fn frames(&self) -> usize {
        self.data.dim().0
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn height(&self) -> usize {
        self.data.dim().2
    }

    pub fn width(&self) -> usize {
        self.data.dim().3
    }

    pub fn frame(&self, t: usize) -> FrameImage {
        FrameImage {
            data: self.data.index_axis(Axis(0), t).to_owned(),
            color_space: self.color_space,
        }
    }

    pub fn center_frame(&self) -> FrameImage {
        self.frame(self.frames() / 2)
    }

    /// Frames `start..start+len`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.frames() {
            return Err(Error::Range(format!(
                "window {start}..{} exceeds {} frames",
                start + len,
                self.frames()
            )));
        }
        Ok(Self {
            data: self.data.slice(s![start..start + len, .., .., ..]).to_owned(),
            frame_rate: self.frame_rate,
            color_space: self.color_space,
        })
    }

    /// Spatial crop `[y0, y0+h) × [x0, x0+w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if y0 + h > self.height() || x0 + w > self.width() {
            return Err(Error::Range(format!(
                "crop {h}×{w} at ({y0},{x0}) exceeds {}×{}",
                self.height(),
                self.width()
            )));
        }
        Ok(Self {
            data: self.data.slice(s![.., .., y0..y0 + h, x0..x0 + w]).to_owned(),
            frame_rate: self.frame_rate,
            color_space: self.color_space,
        })
    }

    pub fn from_frames(frames: &[FrameImage]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Shape("clip needs at least one frame".into()))?;
        let views: Vec<ArrayView3<f64>> = frames.iter().map(|f| f.data.view()).collect();
        let data = ndarray::stack(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(data, first.color_space)
    }
}

impl FrameImage {
    pub fn new(data: Array3<f64>, color_space: ColorSpace) -> Result<Self> {
        let (c, h, w) = data.dim();
        check_dims(c, h, w)?;
        Ok(Self { data, color_space })
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    /// Luma plane: channel 0 of YCbCr, BT.709 weights for RGB, the single
    /// channel otherwise.
    pub fn luma(&self) -> ndarray::Array2<f64> {
        match (self.color_space, self.channels()) {
            (ColorSpace::Rgb, 3) => {
                &self.data.index_axis(Axis(0), 0) * KR
                    + &self.data.index_axis(Axis(0), 1) * KG
                    + &self.data.index_axis(Axis(0), 2) * KB
            }
            _ => self.data.index_axis(Axis(0), 0).to_owned(),
        }
    }

    pub fn to_ycbcr(&self) -> Result<FrameImage> {
        let clip = VideoClip::new(self.data.clone().insert_axis(Axis(0)), self.color_space)?;
        Ok(rgb_to_ycbcr(&clip)?.frame(0))
    }

    pub fn to_rgb(&self) -> Result<FrameImage> {
        let clip = VideoClip::new(self.data.clone().insert_axis(Axis(0)), self.color_space)?;
        Ok(ycbcr_to_rgb(&clip)?.frame(0))
    }
}

fn map_pixels(data: &Array4<f64>, f: impl Fn([f64; 3]) -> [f64; 3]) -> Array4<f64> {
    let (t, _, h, w) = data.dim();
    let mut out = Array4::zeros((t, 3, h, w));
    for f_ in 0..t {
        for i in 0..h {
            for j in 0..w {
                let px = [data[[f_, 0, i, j]], data[[f_, 1, i, j]], data[[f_, 2, i, j]]];
                let o = f(px);
                for c in 0..3 {
                    out[[f_, c, i, j]] = o[c];
                }
            }
        }
    }
    out
}

pub fn rgb_to_ycbcr(clip: &VideoClip) -> Result<VideoClip> {
    if clip.color_space != ColorSpace::Rgb || clip.channels() != 3 {
        return Err(Error::InvalidInput(format!(
            "rgb_to_ycbcr expects a 3-channel RGB clip, got {:?} with {} channels",
            clip.color_space,
            clip.channels()
        )));
    }
    Ok(VideoClip {
        data: map_pixels(&clip.data, rgb_to_ycbcr_px),
        frame_rate: clip.frame_rate,
        color_space: ColorSpace::YCbCr,
    })
}

/// Inverse transform followed by a clamp to `[0, 1]`.
pub fn ycbcr_to_rgb(clip: &VideoClip) -> Result<VideoClip> {
    if clip.color_space != ColorSpace::YCbCr {
        return Err(Error::InvalidInput(format!(
            "ycbcr_to_rgb expects a YCbCr clip, got {:?}",
            clip.color_space
        )));
    }
    let data = map_pixels(&clip.data, |p| ycbcr_to_rgb_px(p).map(clamp_unit_value));
    Ok(VideoClip {
        data,
        frame_rate: clip.frame_rate,
        color_space: ColorSpace::Rgb,
    })
}

pub fn clamp_unit(clip: &VideoClip) -> VideoClip {
    VideoClip {
        data: clip.data.mapv(clamp_unit_value),
        frame_rate: clip.frame_rate,
        color_space: clip.color_space,
    }
}

/// Deterministic toy content: a tinted gradient, a drifting sinusoidal
/// texture and a few moving coloured discs. Useful for tests and smoke runs.
pub fn synthetic_clip(frames: usize, h: usize, w: usize, seed: u64) -> Result<VideoClip> {
    use rand::{Rng, SeedableRng};
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let base: [f64; 3] = [r.random_range(0.2..0.6), r.random_range(0.2..0.6), r.random_range(0.2..0.6)];
    let tilt: [f64; 2] = [r.random_range(-0.2..0.2), r.random_range(-0.2..0.2)];
    let freq: [f64; 2] = [r.random_range(0.1..0.5), r.random_range(0.1..0.5)];
    let drift: f64 = r.random_range(-0.3..0.3);
    let discs: Vec<[f64; 8]> = (0..3)
        .map(|_| {
            [
                r.random_range(0.0..h as f64),
                r.random_range(0.0..w as f64),
                r.random_range(-1.5..1.5),
                r.random_range(-1.5..1.5),
                r.random_range(0.1..0.25) * h.min(w) as f64,
                r.random_range(0.05..0.95),
                r.random_range(0.05..0.95),
                r.random_range(0.05..0.95),
            ]
        })
        .collect();
    let data = Array4::from_shape_fn((frames, 3, h, w), |(t, c, i, j)| {
        let (y, x) = (i as f64 / h as f64, j as f64 / w as f64);
        let tex = 0.08 * ((freq[0] * i as f64 + drift * t as f64).sin() * (freq[1] * j as f64).cos());
        let mut v = base[c] + tilt[0] * y + tilt[1] * x + tex;
        for d in &discs {
            let (cy, cx) = (d[0] + d[2] * t as f64, d[1] + d[3] * t as f64);
            let dist = ((i as f64 - cy).powi(2) + (j as f64 - cx).powi(2)).sqrt();
            if dist < d[4] {
                v = d[5 + c];
            }
        }
        v.clamp(0.05, 0.95)
    });
    VideoClip::new(data, ColorSpace::Rgb)
}

/// Per-clip sidecar written next to saved frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub frame_rate: Option<f64>,
    pub color_space: ColorSpace,
    pub bit_depth: u8,
}

pub const META_FILE: &str = "clip.json";
pub const RAW_FILE: &str = "frames.f64le";

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

fn wildcard_match(pattern: &str, name: &str) -> bool {
    match pattern.split_once('*') {
        None => pattern == name,
        Some((pre, post)) => {
            name.len() >= pre.len() + post.len() && name.starts_with(pre) && name.ends_with(post)
        }
    }
}

/// Load every file in `dir` matching `pattern` (a single `*` wildcard,
/// default `*.png`) in lexicographic order.
pub fn load_clip(dir: &Path, pattern: Option<&str>) -> Result<VideoClip> {
    let pattern = pattern.unwrap_or("*.png");
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| wildcard_match(pattern, n))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::io(dir, format!("no frames matching {pattern}")));
    }
    let meta: Option<ClipMeta> = fs::read_to_string(dir.join(META_FILE))
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok());

    let mut frames = Vec::with_capacity(files.len());
    let mut dims = None;
    for (idx, path) in files.iter().enumerate() {
        let img = image::open(path).map_err(|e| Error::io(path, format!("frame {idx}: {e}")))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let gray = matches!(
            img.color(),
            image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 | image::ColorType::La16
        );
        let c = if gray { 1 } else { 3 };
        match dims {
            None => dims = Some((c, h, w)),
            Some(d) if d != (c, h, w) => {
                return Err(Error::io(
                    path,
                    format!("frame {idx}: dimensions {c}×{h}×{w} differ from first frame {d:?}"),
                ))
            }
            _ => {}
        }
        let mut arr = Array3::zeros((c, h, w));
        if gray {
            let buf = img.to_luma16();
            for (x, y, p) in buf.enumerate_pixels() {
                arr[[0, y as usize, x as usize]] = p[0] as f64 / 65535.0;
            }
        } else {
            let buf = img.to_rgb16();
            for (x, y, p) in buf.enumerate_pixels() {
                for ch in 0..3 {
                    arr[[ch, y as usize, x as usize]] = p[ch] as f64 / 65535.0;
                }
            }
        }
        let cs = meta.as_ref().map_or(ColorSpace::Rgb, |m| m.color_space);
        let cs = if c == 3 { cs } else { ColorSpace::Rgb };
        frames.push(FrameImage::new(arr, cs).map_err(|e| Error::io(path, format!("frame {idx}: {e}")))?);
    }
    let mut clip = VideoClip::from_frames(&frames)?;
    clip.frame_rate = meta.and_then(|m| m.frame_rate);
    Ok(clip)
}

fn quantize(x: f64, max: f64) -> f64 {
    (clamp_unit_value(x) * max).round()
}

/// Write `frame_%06d.png` files (8- or 16-bit) plus the metadata sidecar.
pub fn save_clip(clip: &VideoClip, dir: &Path, bit_depth: u8) -> Result<()> {
    if bit_depth != 8 && bit_depth != 16 {
        return Err(Error::Config(format!("bit depth must be 8 or 16, got {bit_depth}")));
    }
    if clip.channels() == 2 {
        return Err(Error::InvalidInput("two-channel clips cannot be written as PNG".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for t in 0..clip.frames() {
        let path = dir.join(frame_file_name(t));
        save_frame_png(&clip.frame(t), &path, bit_depth)?;
    }
    write_meta(clip, dir, bit_depth)
}

fn write_meta(clip: &VideoClip, dir: &Path, bit_depth: u8) -> Result<()> {
    let meta = ClipMeta {
        frames: clip.frames(),
        channels: clip.channels(),
        height: clip.height(),
        width: clip.width(),
        frame_rate: clip.frame_rate,
        color_space: clip.color_space,
        bit_depth,
    };
    let path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::io(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn save_frame_png(frame: &FrameImage, path: &Path, bit_depth: u8) -> Result<()> {
    let (c, h, w) = frame.data.dim();
    let (wu, hu) = (w as u32, h as u32);
    let d = &frame.data;
    let res = match (c, bit_depth) {
        (1, 8) => ImageBuffer::from_fn(wu, hu, |x, y| Luma([quantize(d[[0, y as usize, x as usize]], 255.0) as u8])).save(path),
        (1, _) => ImageBuffer::from_fn(wu, hu, |x, y| Luma([quantize(d[[0, y as usize, x as usize]], 65535.0) as u16])).save(path),
        (3, 8) => ImageBuffer::from_fn(wu, hu, |x, y| {
            let (i, j) = (y as usize, x as usize);
            Rgb([0, 1, 2].map(|ch| quantize(d[[ch, i, j]], 255.0) as u8))
        })
        .save(path),
        (3, _) => ImageBuffer::from_fn(wu, hu, |x, y| {
            let (i, j) = (y as usize, x as usize);
            Rgb([0, 1, 2].map(|ch| quantize(d[[ch, i, j]], 65535.0) as u16))
        })
        .save(path),
        _ => return Err(Error::InvalidInput(format!("cannot write {c}-channel frame as PNG"))),
    };
    res.map_err(|e| Error::io(path, e))
}

/// Debug dump: raw little-endian `f64` samples in `T,C,H,W` order.
pub fn save_clip_raw(clip: &VideoClip, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bytes: Vec<u8> = clip.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    let path = dir.join(RAW_FILE);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    write_meta(clip, dir, 64)
}

pub fn load_clip_raw(dir: &Path) -> Result<VideoClip> {
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: ClipMeta = serde_json::from_str(&text).map_err(|e| Error::io(&meta_path, e))?;
    let path = dir.join(RAW_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    let data = Array4::from_shape_vec((meta.frames, meta.channels, meta.height, meta.width), values)
        .map_err(|e| Error::io(&path, e))?;
    let mut clip = VideoClip::new(data, meta.color_space)?;
    clip.frame_rate = meta.frame_rate;
    Ok(clip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn solid(rgb: [f64; 3]) -> VideoClip {
        let mut data = Array4::zeros((1, 3, 8, 8));
        for c in 0..3 {
            data.slice_mut(s![.., c, .., ..]).fill(rgb[c]);
        }
        VideoClip::new(data, ColorSpace::Rgb).unwrap()
    }

    fn px(clip: &VideoClip) -> [f64; 3] {
        [clip.data[[0, 0, 3, 3]], clip.data[[0, 1, 3, 3]], clip.data[[0, 2, 3, 3]]]
    }

    #[test]
    fn white_and_gray_are_achromatic() {
        let w = px(&rgb_to_ycbcr(&solid([1.0; 3])).unwrap());
        assert!((w[0] - 1.0).abs() < 1e-12);
        assert_eq!(w[1], 0.5);
        assert_eq!(w[2], 0.5);
        let g = px(&rgb_to_ycbcr(&solid([0.5; 3])).unwrap());
        assert!((g[0] - 0.5).abs() < 1e-12 && (g[1] - 0.5).abs() < 1e-12 && (g[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pure_red_golden() {
        // Y = Kr; Cb = 0.5 − Kr/(2(1−Kb)); Cr = 0.5 + 0.5.
        let r = px(&rgb_to_ycbcr(&solid([1.0, 0.0, 0.0])).unwrap());
        assert!((r[0] - 0.2126).abs() < 1e-12);
        assert!((r[1] - 0.385_427_893_942_66).abs() < 1e-12);
        assert!((r[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wrong_tag_is_rejected() {
        let c = solid([0.2, 0.3, 0.4]);
        assert!(matches!(ycbcr_to_rgb(&c), Err(Error::InvalidInput(_))));
        let y = rgb_to_ycbcr(&c).unwrap();
        assert!(matches!(rgb_to_ycbcr(&y), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn achromatic_inverse_and_out_of_gamut_clamp() {
        let mut data = Array4::from_elem((1, 3, 8, 8), 0.5);
        let g = ycbcr_to_rgb(&VideoClip::new(data.clone(), ColorSpace::YCbCr).unwrap()).unwrap();
        assert!(px(&g).iter().all(|v| (v - 0.5).abs() < 1e-12));
        data.slice_mut(s![.., 2, .., ..]).fill(1.0);
        data.slice_mut(s![.., 0, .., ..]).fill(0.95);
        let o = ycbcr_to_rgb(&VideoClip::new(data, ColorSpace::YCbCr).unwrap()).unwrap();
        assert!(o.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn clamp_values() {
        let data = Array::from_shape_vec((1, 1, 8, 8), (0..64).map(|i| [1.3, -0.2, 0.7][i % 3]).collect()).unwrap();
        let c = clamp_unit(&VideoClip::new(data, ColorSpace::Rgb).unwrap());
        assert_eq!(c.data[[0, 0, 0, 0]], 1.0);
        assert_eq!(c.data[[0, 0, 0, 1]], 0.0);
        assert_eq!(c.data[[0, 0, 0, 2]], 0.7);
        assert_eq!(clamp_unit(&c), c);
    }

    #[test]
    fn shape_invariants() {
        assert!(VideoClip::new(Array4::zeros((1, 4, 8, 8)), ColorSpace::Rgb).is_err());
        assert!(VideoClip::new(Array4::zeros((1, 3, 7, 8)), ColorSpace::Rgb).is_err());
        assert!(VideoClip::new(Array4::zeros((0, 3, 8, 8)), ColorSpace::Rgb).is_err());
    }

    #[test]
    fn wildcard() {
        assert!(wildcard_match("*.png", "frame_000001.png"));
        assert!(wildcard_match("frame_*.png", "frame_000001.png"));
        assert!(!wildcard_match("*.png", "clip.json"));
    }
}
