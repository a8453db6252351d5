//! Overlap-tiled full-resolution inference with normalized blend windows.

use crate::error::{Error, Result};
use crate::media::{FrameImage, VideoClip};
use crate::network::Model;
use ndarray::{s, Array1, Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};

/// Floor of the blend profile; keeps the normalizing denominator positive.
pub const WINDOW_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tile {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TilePlan {
    pub tiles: Vec<Tile>,
    /// Effective tile extent `(h, w)`; smaller than requested only when
    /// the image itself is smaller.
    pub tile: (usize, usize),
    pub overlap: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TilingConfig {
    pub tile: usize,
    pub overlap: usize,
    pub no_overlap: bool,
    /// Tiles restored concurrently; `1` runs sequentially.
    pub workers: usize,
}

impl Default for TilingConfig {
    fn default() -> Self {
        Self { tile: 640, overlap: 64, no_overlap: false, workers: 1 }
    }
}

impl TilingConfig {
    pub fn effective_overlap(&self) -> usize {
        if self.no_overlap {
            0
        } else {
            self.overlap
        }
    }

    pub fn plan(&self, h: usize, w: usize) -> Result<TilePlan> {
        plan_tiles(h, w, self.tile, self.effective_overlap())
    }
}

/// Origins along one axis: uniform stride, last tile shifted to end at
/// the edge.
fn origins(len: usize, tile: usize, stride: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let mut v: Vec<usize> = (0..).map(|k| k * stride).take_while(|&o| o + tile < len).collect();
    v.push(len - tile);
    v
}

pub fn plan_tiles(h: usize, w: usize, tile: usize, overlap: usize) -> Result<TilePlan> {
    if tile == 0 || overlap >= tile {
        return Err(Error::Config(format!("tile overlap ({overlap}) must be smaller than the tile size ({tile})")));
    }
    if h == 0 || w == 0 {
        return Err(Error::Shape(format!("cannot tile an empty {h}×{w} image")));
    }
    let stride = tile - overlap;
    let (th, tw) = (tile.min(h), tile.min(w));
    let ys = origins(h, tile, stride);
    let xs = origins(w, tile, stride);
    let tiles = ys
        .iter()
        .flat_map(|&y0| xs.iter().map(move |&x0| Tile { x0, y0, x1: x0 + tw, y1: y0 + th }))
        .collect();
    Ok(TilePlan { tiles, tile: (th, tw), overlap, height: h, width: w })
}

/// 1-D raised-cosine profile: `ε + (1−ε)·sin²(π(i+½)/(2·overlap))` on each
/// margin, 1 in the interior.
pub fn blend_profile(len: usize, overlap: usize) -> Array1<f64> {
    let ramp = |i: usize| {
        if i >= overlap {
            1.0
        } else {
            let s = (std::f64::consts::PI * (i as f64 + 0.5) / (2.0 * overlap as f64)).sin();
            WINDOW_FLOOR + (1.0 - WINDOW_FLOOR) * s * s
        }
    };
    Array1::from_shape_fn(len, |i| ramp(i).min(ramp(len - 1 - i)))
}

/// Separable blend window `h × w`.
pub fn blend_window(h: usize, w: usize, overlap: usize) -> Array2<f64> {
    let py = blend_profile(h, overlap);
    let px = blend_profile(w, overlap);
    Array2::from_shape_fn((h, w), |(i, j)| py[i] * px[j])
}

/// Anything that maps a clip to its restored centre frame.
pub trait Restorer: Sync {
    fn restore(&self, clip: &VideoClip) -> Result<FrameImage>;
}

impl Restorer for Model {
    fn restore(&self, clip: &VideoClip) -> Result<FrameImage> {
        Ok(self.forward(clip)?.restored)
    }
}

/// Returns the centre frame unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityModel;

impl Restorer for IdentityModel {
    fn restore(&self, clip: &VideoClip) -> Result<FrameImage> {
        Ok(clip.center_frame())
    }
}

#[derive(Clone, Debug)]
pub struct TiledOutput {
    pub frame: FrameImage,
    /// Accumulated `Σ_p w_p` per pixel.
    pub denominator: Array2<f64>,
    /// Largest number of tiles restored at the same time.
    pub max_in_flight: usize,
}

struct InFlight<'a>(&'a AtomicUsize);

impl<'a> InFlight<'a> {
    fn enter(now: &'a AtomicUsize, peak: &AtomicUsize) -> Self {
        let n = now.fetch_add(1, Ordering::SeqCst) + 1;
        peak.fetch_max(n, Ordering::SeqCst);
        Self(now)
    }
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

fn restore_tile<R: Restorer + ?Sized>(model: &R, clip: &VideoClip, t: &Tile, idx: usize) -> Result<FrameImage> {
    let x = clip.crop(t.y0, t.x0, t.y1 - t.y0, t.x1 - t.x0)?;
    let out = model.restore(&x)?;
    let want = (clip.channels(), t.y1 - t.y0, t.x1 - t.x0);
    if out.data.dim() != want {
        return Err(Error::Shape(format!(
            "tile {idx} at ({}, {}): model returned {:?}, expected {want:?}",
            t.y0,
            t.x0,
            out.data.dim()
        )));
    }
    Ok(out)
}

/// Restores `clip` tile by tile and blends the results. Tiles are
/// accumulated in plan order; with `workers > 1` up to that many tiles are
/// restored concurrently before each accumulation round, so the result is
/// the same for any worker count.
pub fn tiled_inference<R: Restorer + ?Sized>(model: &R, clip: &VideoClip, plan: &TilePlan, workers: usize) -> Result<TiledOutput> {
    if clip.height() != plan.height || clip.width() != plan.width {
        return Err(Error::Shape(format!(
            "plan is for {}×{}, clip is {}×{}",
            plan.height,
            plan.width,
            clip.height(),
            clip.width()
        )));
    }
    let window = blend_window(plan.tile.0, plan.tile.1, plan.overlap);
    let c = clip.channels();
    let mut num = Array3::<f64>::zeros((c, plan.height, plan.width));
    let mut den = Array2::<f64>::zeros((plan.height, plan.width));
    let now = AtomicUsize::new(0);
    let peak = AtomicUsize::new(0);
    let workers = workers.max(1);
    let indexed: Vec<(usize, &Tile)> = plan.tiles.iter().enumerate().collect();
    for chunk in indexed.chunks(workers) {
        let run = |&(i, t): &(usize, &Tile)| {
            let _guard = InFlight::enter(&now, &peak);
            restore_tile(model, clip, t, i)
        };
        let outs: Vec<Result<FrameImage>> =
            if workers == 1 { chunk.iter().map(run).collect() } else { chunk.par_iter().map(run).collect() };
        for (&(_, t), out) in chunk.iter().zip(outs) {
            let out = out?;
            let mut d = den.slice_mut(s![t.y0..t.y1, t.x0..t.x1]);
            d += &window;
            for ch in 0..c {
                let mut n = num.slice_mut(s![ch, t.y0..t.y1, t.x0..t.x1]);
                n += &(&out.data.slice(s![ch, .., ..]) * &window);
            }
        }
    }
    if let Some(p) = den.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Numeric(format!(
            "pixel ({}, {}) received no tile contribution",
            p / plan.width,
            p % plan.width
        )));
    }
    for ch in 0..c {
        let mut n = num.slice_mut(s![ch, .., ..]);
        n /= &den;
    }
    Ok(TiledOutput {
        frame: FrameImage { data: num, color_space: clip.color_space },
        denominator: den,
        max_in_flight: peak.load(Ordering::SeqCst),
    })
}

/// `len` frames centred on `t`, replicating the first and last frames at
/// the clip ends.
pub fn centered_window(clip: &VideoClip, t: usize, len: usize) -> Result<VideoClip> {
    let n = clip.frames() as i64;
    let frames: Vec<FrameImage> = (0..len as i64)
        .map(|k| clip.frame((t as i64 + k - len as i64 / 2).clamp(0, n - 1) as usize))
        .collect();
    let mut w = VideoClip::from_frames(&frames)?;
    w.frame_rate = clip.frame_rate;
    Ok(w)
}

/// Restores every frame of `clip` from its centred window, tile by tile.
pub fn restore_video<R: Restorer + ?Sized>(
    model: &R,
    clip: &VideoClip,
    window: usize,
    plan: &TilePlan,
    workers: usize,
) -> Result<VideoClip> {
    let frames = (0..clip.frames())
        .map(|t| Ok(tiled_inference(model, &centered_window(clip, t, window)?, plan, workers)?.frame))
        .collect::<Result<Vec<_>>>()?;
    let mut out = VideoClip::from_frames(&frames)?;
    out.frame_rate = clip.frame_rate;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::ColorSpace;
    use ndarray::Array4;

    #[test]
    fn plan_examples() {
        let p = plan_tiles(640, 640, 640, 64).unwrap();
        assert_eq!(p.tiles, vec![Tile { x0: 0, y0: 0, x1: 640, y1: 640 }]);
        let p = plan_tiles(640, 1216, 640, 64).unwrap();
        let xs: Vec<usize> = p.tiles.iter().map(|t| t.x0).collect();
        assert_eq!(xs, vec![0, 576]);
        assert_eq!(p.tiles[1].x1, 1216);
        let p = plan_tiles(2160, 3840, 640, 64).unwrap();
        let mut ys: Vec<usize> = p.tiles.iter().map(|t| t.y0).collect();
        ys.dedup();
        assert_eq!(ys, vec![0, 576, 1152, 1520]);
        assert!(matches!(plan_tiles(100, 100, 64, 64), Err(Error::Config(_))));
    }

    #[test]
    fn small_image_is_one_tile() {
        let p = plan_tiles(48, 100, 64, 8).unwrap();
        assert_eq!(p.tile, (48, 64));
        assert!(p.tiles.iter().all(|t| t.y0 == 0 && t.y1 == 48));
    }

    #[test]
    fn profile_shape() {
        let p = blend_profile(64, 16);
        for i in 0..64 {
            assert_eq!(p[i], p[63 - i]);
            assert!(p[i] >= WINDOW_FLOOR);
        }
        assert_eq!(p[16], 1.0);
        assert_eq!(p[47], 1.0);
        // abutting ramps are complementary
        for j in 0..16 {
            assert!((p[j] + p[63 - 15 + j] - (1.0 + WINDOW_FLOOR)).abs() < 1e-12);
        }
        assert!(blend_profile(10, 0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn windows_replicate_edges() {
        let data = Array4::from_shape_fn((3, 1, 8, 8), |(t, _, _, _)| t as f64);
        let clip = VideoClip::new(data, ColorSpace::Rgb).unwrap();
        let w = centered_window(&clip, 0, 5).unwrap();
        let firsts: Vec<f64> = (0..5).map(|k| w.data[[k, 0, 0, 0]]).collect();
        assert_eq!(firsts, vec![0.0, 0.0, 0.0, 1.0, 2.0]);
        let out = restore_video(&IdentityModel, &clip, 5, &plan_tiles(8, 8, 8, 2).unwrap(), 1).unwrap();
        assert_eq!(out.data, clip.data);
    }

    #[test]
    fn mismatched_output_names_tile() {
        struct Bad;
        impl Restorer for Bad {
            fn restore(&self, clip: &VideoClip) -> Result<FrameImage> {
                Ok(clip.crop(0, 0, 8, 8)?.center_frame())
            }
        }
        let clip = VideoClip::new(Array4::zeros((1, 3, 32, 32)), ColorSpace::Rgb).unwrap();
        let plan = plan_tiles(32, 32, 16, 4).unwrap();
        let err = tiled_inference(&Bad, &clip, &plan, 1).unwrap_err().to_string();
        assert!(err.contains("tile 0"), "{err}");
    }
}
