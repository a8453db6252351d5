use super::stages::clamped;
use super::{CompressionConfig, CompressionMode};
use crate::error::{Error, Result};
use crate::media::{load_clip, rgb_to_ycbcr_px, save_clip, ycbcr_to_rgb_px, ColorSpace, VideoClip};
use ndarray::Array2;
use std::path::{Path, PathBuf};
use std::process::Command;

/// Orthonormal DCT-II basis, rows are frequencies.
pub fn dct8_matrix() -> [[f64; 8]; 8] {
    let mut m = [[0.0; 8]; 8];
    for (k, row) in m.iter_mut().enumerate() {
        let a = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (n, v) in row.iter_mut().enumerate() {
            *v = a * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / 16.0).cos();
        }
    }
    m
}

/// Quantizer step of the proxy codec: doubles every 6 CRF points.
pub fn proxy_quant_step(crf: u32) -> f64 {
    0.002 * 2f64.powf((crf as f64 - 28.0) / 6.0)
}

/// Blockwise 8×8 DCT, uniform quantization with step `q`, inverse DCT.
/// Partial edge blocks are replicate-padded and cropped back.
pub fn proxy_quantize_luma(y: &Array2<f64>, q: f64) -> Array2<f64> {
    let d = dct8_matrix();
    let (h, w) = y.dim();
    let mut out = Array2::zeros((h, w));
    let mut block = [[0.0; 8]; 8];
    let mut tmp = [[0.0; 8]; 8];
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            for (i, row) in block.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = y[[(by + i).min(h - 1), (bx + j).min(w - 1)]];
                }
            }
            // C = D·B·Dᵀ
            for i in 0..8 {
                for j in 0..8 {
                    tmp[i][j] = (0..8).map(|k| d[i][k] * block[k][j]).sum();
                }
            }
            for i in 0..8 {
                for j in 0..8 {
                    let c: f64 = (0..8).map(|k| tmp[i][k] * d[j][k]).sum();
                    block[i][j] = if q > 0.0 { (c / q).round() * q } else { c };
                }
            }
            // B = Dᵀ·C·D
            for i in 0..8 {
                for j in 0..8 {
                    tmp[i][j] = (0..8).map(|k| d[k][i] * block[k][j]).sum();
                }
            }
            for i in 0..8 {
                for j in 0..8 {
                    if by + i < h && bx + j < w {
                        out[[by + i, bx + j]] = (0..8).map(|k| tmp[i][k] * d[k][j]).sum();
                    }
                }
            }
        }
    }
    out
}

fn proxy(clip: &VideoClip, crf: u32) -> VideoClip {
    let q = proxy_quant_step(crf);
    let (t, _, h, w) = clip.data.dim();
    let mut data = clip.data.clone();
    for f in 0..t {
        let mut ycc = ndarray::Array3::<f64>::zeros((3, h, w));
        for i in 0..h {
            for j in 0..w {
                let p = rgb_to_ycbcr_px([clip.data[[f, 0, i, j]], clip.data[[f, 1, i, j]], clip.data[[f, 2, i, j]]]);
                for c in 0..3 {
                    ycc[[c, i, j]] = p[c];
                }
            }
        }
        let luma = proxy_quantize_luma(&ycc.index_axis(ndarray::Axis(0), 0).to_owned(), q);
        for i in 0..h {
            for j in 0..w {
                let rgb = ycbcr_to_rgb_px([luma[[i, j]], ycc[[1, i, j]], ycc[[2, i, j]]]);
                for c in 0..3 {
                    data[[f, c, i, j]] = rgb[c];
                }
            }
        }
    }
    clamped(clip, data)
}

fn find_on_path(tool: &str) -> Option<PathBuf> {
    let p = Path::new(tool);
    if p.components().count() > 1 {
        return p.is_file().then(|| p.to_path_buf());
    }
    std::env::var_os("PATH")
        .and_then(|paths| std::env::split_paths(&paths).map(|d| d.join(tool)).find(|c| c.is_file()))
}

fn external(clip: &VideoClip, crf: u32, template: &str) -> Result<VideoClip> {
    let tool = template
        .split_whitespace()
        .next()
        .ok_or_else(|| Error::Config("compression.command is empty".into()))?;
    if find_on_path(tool).is_none() {
        return Err(Error::Config(format!("external encoder `{tool}` was not found")));
    }
    let work = std::env::temp_dir().join(format!("gpvd-codec-{}-{}", std::process::id(), crf));
    let (inp, outp) = (work.join("in"), work.join("out"));
    for d in [&inp, &outp] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    save_clip(clip, &inp, 16)?;
    let cmd = template
        .replace("{input}", &inp.to_string_lossy())
        .replace("{output}", &outp.to_string_lossy())
        .replace("{crf}", &crf.to_string());
    let status = Command::new("sh").arg("-c").arg(&cmd).status().map_err(|e| Error::io(tool, e))?;
    if !status.success() {
        let _ = std::fs::remove_dir_all(&work);
        return Err(Error::Config(format!("external encoder `{tool}` exited with {status}")));
    }
    let decoded = load_clip(&outp, Some("frame_*.png"));
    let _ = std::fs::remove_dir_all(&work);
    let mut decoded = decoded?;
    if decoded.data.dim() != clip.data.dim() {
        return Err(Error::Shape(format!(
            "external encoder returned {:?}, expected {:?}",
            decoded.data.dim(),
            clip.data.dim()
        )));
    }
    decoded.frame_rate = clip.frame_rate;
    Ok(decoded)
}

pub fn apply_compression(clip: &VideoClip, cfg: &CompressionConfig) -> Result<VideoClip> {
    if cfg.mode != CompressionMode::None && (clip.color_space != ColorSpace::Rgb || clip.channels() != 3) {
        return Err(Error::InvalidInput("compression expects a 3-channel RGB clip".into()));
    }
    match cfg.mode {
        CompressionMode::None => Ok(clip.clone()),
        CompressionMode::Proxy => Ok(proxy(clip, cfg.crf)),
        CompressionMode::External => {
            let template = cfg
                .command
                .as_deref()
                .ok_or_else(|| Error::Config("external compression needs compression.command".into()))?;
            external(clip, cfg.crf, template)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dct_is_orthonormal() {
        let d = dct8_matrix();
        for i in 0..8 {
            for j in 0..8 {
                let dot: f64 = (0..8).map(|k| d[i][k] * d[j][k]).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tiny_step_is_identity() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let y = Array2::from_shape_simple_fn((13, 21), || r.random::<f64>());
        let out = proxy_quantize_luma(&y, 1e-9);
        assert!(out.iter().zip(y.iter()).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn step_doubles_every_six() {
        assert_eq!(proxy_quant_step(28), 0.002);
        assert!((proxy_quant_step(34) - 0.004).abs() < 1e-15);
    }

    #[test]
    fn none_mode_identity_and_missing_tool() {
        let clip = VideoClip::new(Array4::from_elem((1, 3, 8, 8), 0.2), ColorSpace::Rgb).unwrap();
        let cfg = CompressionConfig { mode: CompressionMode::None, crf: 28, command: None };
        assert_eq!(apply_compression(&clip, &cfg).unwrap(), clip);
        let cfg = CompressionConfig {
            mode: CompressionMode::External,
            crf: 28,
            command: Some("definitely-not-an-encoder-xyz -i {input} {output}".into()),
        };
        match apply_compression(&clip, &cfg) {
            Err(Error::Config(msg)) => assert!(msg.contains("definitely-not-an-encoder-xyz")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn external_round_trip_with_copy() {
        let clip = VideoClip::new(Array4::from_elem((2, 3, 8, 8), 0.25), ColorSpace::Rgb).unwrap();
        let cfg = CompressionConfig {
            mode: CompressionMode::External,
            crf: 30,
            command: Some("cp -r {input}/. {output}".into()),
        };
        let out = apply_compression(&clip, &cfg).unwrap();
        assert!(out.data.iter().all(|v| (v - 0.25).abs() < 1.0 / 65535.0));
    }
}
