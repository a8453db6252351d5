use super::metrics::residual_map;
use crate::error::Result;
use crate::media::{save_frame_png, ColorSpace, FrameImage};
use crate::network::ModelOutput;
use ndarray::{Array2, Array3, Axis};
use std::path::{Path, PathBuf};

/// Blue-to-yellow ramp for heatmaps.
fn colormap(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    [v.powf(0.8), (v * std::f64::consts::PI).sin() * 0.6 + 0.4 * v, (1.0 - v).powi(2) * 0.9 + 0.1 * v]
}

/// Min-max normalized heatmap, nearest-neighbour resized to `h × w`.
pub fn heatmap(map: &Array2<f64>, h: usize, w: usize) -> FrameImage {
    let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (mh, mw) = map.dim();
    let data = Array3::from_shape_fn((3, h, w), |(c, i, j)| {
        let v = map[[i * mh / h, j * mw / w]];
        colormap((v - lo) / span)[c]
    });
    FrameImage { data, color_space: ColorSpace::Rgb }
}

fn grid(panels: &[FrameImage], cols: usize) -> FrameImage {
    let (_, h, w) = panels[0].data.dim();
    let rows = panels.len().div_ceil(cols);
    let mut data = Array3::<f64>::zeros((3, rows * h, cols * w));
    for (k, p) in panels.iter().enumerate() {
        let (r, c) = (k / cols, k % cols);
        data.slice_mut(ndarray::s![.., r * h..(r + 1) * h, c * w..(c + 1) * w]).assign(&p.data);
    }
    FrameImage { data, color_space: ColorSpace::Rgb }
}

/// Writes the restored frame, absolute residual, GP log-variance, predicted
/// log-variance and per-stage gate maps, each as its own PNG plus a
/// combined `panel.png`. Returns the paths written.
pub fn write_diagnostics(out: &ModelOutput, clean: &FrameImage, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    let (_, h, w) = out.restored.data.dim();
    let mut named: Vec<(String, FrameImage)> = vec![
        ("restored".into(), out.restored.clone()),
        ("residual".into(), heatmap(&residual_map(&out.restored, clean), h, w)),
    ];
    for d in &out.diagnostics {
        let t = d.variance.dim().0 / 2;
        let lv = d.variance.index_axis(Axis(0), t).mapv(|v| (v + 1e-6).ln());
        named.push((format!("gp_logvar_stage{}", d.stage), heatmap(&lv, h, w)));
    }
    named.push(("pred_logvar".into(), heatmap(&out.log_variance, h, w)));
    for d in &out.diagnostics {
        let t = d.gate.dim().0 / 2;
        named.push((format!("gate_stage{}", d.stage), heatmap(&d.gate.index_axis(Axis(0), t).to_owned(), h, w)));
    }
    let mut paths = Vec::new();
    for (name, img) in &named {
        let p = dir.join(format!("{name}.png"));
        save_frame_png(img, &p, 8)?;
        paths.push(p);
    }
    let panels: Vec<FrameImage> = named.into_iter().map(|(_, f)| f).collect();
    let p = dir.join("panel.png");
    save_frame_png(&grid(&panels, 4), &p, 8)?;
    paths.push(p);
    Ok(paths)
}
