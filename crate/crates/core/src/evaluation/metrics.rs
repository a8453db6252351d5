use crate::error::Result;
use crate::media::{rgb_to_ycbcr_px, ColorSpace, FrameImage, VideoClip};
use crate::tiling::TilePlan;
use log::warn;
use ndarray::{Array2, ArrayBase, Axis, Data, Dimension, Zip};

/// PSNR reported for identical inputs.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_RADIUS: usize = 5;
/// Average-pooling factor applied before the error–uncertainty correlation.
pub const CORR_POOL: usize = 8;

/// `10·log10(1/MSE)` for signals in `[0, 1]`, capped at [`PSNR_CAP`].
pub fn psnr<S1, S2, D>(a: &ArrayBase<S1, D>, b: &ArrayBase<S2, D>) -> f64
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    assert_eq!(a.shape(), b.shape(), "psnr needs matched shapes");
    let n = a.len().max(1) as f64;
    let mse = Zip::from(a).and(b).fold(0.0, |acc, &x, &y| acc + (x - y) * (x - y)) / n;
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

fn gaussian_taps() -> Vec<f64> {
    let r = SSIM_RADIUS as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter with edge replication.
fn gauss_filter(x: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = x.dim();
    let r = (taps.len() / 2) as i64;
    let clampi = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;
    let tmp = Array2::from_shape_fn((h, w), |(i, j)| {
        taps.iter().enumerate().map(|(k, t)| t * x[[i, clampi(j as i64 + k as i64 - r, w)]]).sum::<f64>()
    });
    Array2::from_shape_fn((h, w), |(i, j)| {
        taps.iter().enumerate().map(|(k, t)| t * tmp[[clampi(i as i64 + k as i64 - r, h), j]]).sum::<f64>()
    })
}

/// Mean Gaussian-window SSIM between two single-channel images.
pub fn ssim_map(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    assert_eq!(a.dim(), b.dim(), "ssim needs matched shapes");
    let taps = gaussian_taps();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mu_a = gauss_filter(a, &taps);
    let mu_b = gauss_filter(b, &taps);
    let aa = gauss_filter(&(a * a), &taps);
    let bb = gauss_filter(&(b * b), &taps);
    let ab = gauss_filter(&(a * b), &taps);
    Array2::from_shape_fn(a.dim(), |ix| {
        let (ma, mb) = (mu_a[ix], mu_b[ix]);
        let va = aa[ix] - ma * ma;
        let vb = bb[ix] - mb * mb;
        let cov = ab[ix] - ma * mb;
        ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
    })
}

pub fn ssim_luma(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    if a == b {
        return 1.0;
    }
    ssim_map(a, b).mean().unwrap_or(1.0)
}

/// SSIM on the luminance of two frames.
pub fn ssim(a: &FrameImage, b: &FrameImage) -> f64 {
    ssim_luma(&a.luma(), &b.luma())
}

fn chroma_planes(f: &FrameImage) -> Result<Array2<f64>> {
    let y = f.to_ycbcr()?;
    let (_, h, w) = y.data.dim();
    Ok(y.data.slice(ndarray::s![1..3, .., ..]).to_owned().into_shape_with_order((2 * h, w)).expect("contiguous"))
}

/// PSNR over the joint Cb/Cr planes.
pub fn cbcr_psnr(a: &FrameImage, b: &FrameImage) -> Result<f64> {
    Ok(psnr(&chroma_planes(a)?, &chroma_planes(b)?))
}

fn frame_chroma_means(clip: &VideoClip) -> Vec<[f64; 2]> {
    let (t, _, h, w) = clip.data.dim();
    let n = (h * w) as f64;
    (0..t)
        .map(|f| {
            let fr = clip.data.index_axis(Axis(0), f);
            if clip.color_space == ColorSpace::YCbCr {
                return [fr.index_axis(Axis(0), 1).sum() / n, fr.index_axis(Axis(0), 2).sum() / n];
            }
            let mut acc = [0.0; 2];
            for i in 0..h {
                for j in 0..w {
                    let p = rgb_to_ycbcr_px([fr[[0, i, j]], fr[[1, i, j]], fr[[2, i, j]]]);
                    acc[0] += p[1];
                    acc[1] += p[2];
                }
            }
            [acc[0] / n, acc[1] / n]
        })
        .collect()
}

/// Half the mean absolute frame-to-frame change of the global Cb and Cr
/// means. Zero for clips shorter than two frames.
pub fn chroma_flicker(clip: &VideoClip) -> f64 {
    let m = frame_chroma_means(clip);
    if m.len() < 2 {
        return 0.0;
    }
    let s: f64 = m.windows(2).map(|p| (p[1][0] - p[0][0]).abs() + (p[1][1] - p[0][1]).abs()).sum();
    0.5 * s / (m.len() - 1) as f64
}

/// Per-pixel mean absolute error over channels.
pub fn residual_map(pred: &FrameImage, target: &FrameImage) -> Array2<f64> {
    (&pred.data - &target.data).mapv(f64::abs).mean_axis(Axis(0)).expect("non-empty")
}

pub fn avg_pool(x: &Array2<f64>, k: usize) -> Array2<f64> {
    let (h, w) = x.dim();
    let (ph, pw) = (h / k, w / k);
    Array2::from_shape_fn((ph, pw), |(i, j)| {
        x.slice(ndarray::s![i * k..(i + 1) * k, j * k..(j + 1) * k]).sum() / (k * k) as f64
    })
}

/// Pearson correlation; `0` (with a warning) when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "pearson needs matched lengths");
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        warn!("correlation of a constant map is undefined; reporting 0");
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Pearson correlation between the absolute error map and the predicted
/// standard deviation `exp(s/2)`, both average-pooled by [`CORR_POOL`]
/// (or left unpooled when the map is smaller than one pooling cell).
pub fn err_unc_correlation(abs_err: &Array2<f64>, log_var: &Array2<f64>) -> f64 {
    assert_eq!(abs_err.dim(), log_var.dim(), "err_unc_correlation needs matched shapes");
    let sigma = log_var.mapv(|s| (0.5 * s).exp());
    let (h, w) = abs_err.dim();
    let k = if h >= CORR_POOL && w >= CORR_POOL { CORR_POOL } else { 1 };
    let (a, b) = (avg_pool(abs_err, k), avg_pool(&sigma, k));
    pearson(a.as_slice().expect("standard layout"), b.as_slice().expect("standard layout"))
}

/// Interior tile-boundary positions along one axis.
fn boundaries(plan: &TilePlan, vertical: bool) -> Vec<usize> {
    let len = if vertical { plan.width } else { plan.height };
    let mut v: Vec<usize> = plan
        .tiles
        .iter()
        .flat_map(|t| if vertical { [t.x0, t.x1] } else { [t.y0, t.y1] })
        .filter(|&b| b > 0 && b < len)
        .collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Offset of the reference lines used as the seam-score baseline.
pub fn seam_offset(plan: &TilePlan) -> usize {
    (plan.overlap / 2).max(2)
}

/// Mean absolute gradient across tile boundaries minus the same statistic
/// on lines [`seam_offset`] pixels away, clamped at zero.
pub fn seam_score(luma: &Array2<f64>, plan: &TilePlan) -> f64 {
    let (h, w) = luma.dim();
    let off = seam_offset(plan);
    let col = |b: usize| (0..h).map(|i| (luma[[i, b]] - luma[[i, b - 1]]).abs()).sum::<f64>() / h as f64;
    let row = |b: usize| (0..w).map(|j| (luma[[b, j]] - luma[[b - 1, j]]).abs()).sum::<f64>() / w as f64;
    let (mut on, mut n_on, mut base, mut n_base) = (0.0, 0usize, 0.0, 0usize);
    let mut visit = |bs: Vec<usize>, len: usize, f: &dyn Fn(usize) -> f64| {
        for b in bs {
            on += f(b);
            n_on += 1;
            for r in [b.checked_sub(off), b.checked_add(off)].into_iter().flatten() {
                if r >= 1 && r < len {
                    base += f(r);
                    n_base += 1;
                }
            }
        }
    };
    visit(boundaries(plan, true), w, &col);
    visit(boundaries(plan, false), h, &row);
    if n_on == 0 {
        return 0.0;
    }
    let base = if n_base > 0 { base / n_base as f64 } else { 0.0 };
    (on / n_on as f64 - base).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tiling::plan_tiles;
    use ndarray::{Array3, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn psnr_values() {
        let a = Array2::<f64>::zeros((4, 4));
        let b = Array2::from_elem((4, 4), 0.1);
        assert!((psnr(&a, &b) - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a), PSNR_CAP);
        assert_eq!(psnr(&a, &b), psnr(&b, &a));
    }

    #[test]
    fn psnr_uniform_noise() {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let a = Array2::from_elem((512, 512), 0.5);
        let b = a.mapv(|v| v + r.random_range(-0.05..0.05));
        let expect = 10.0 * (12.0f64 / 0.01).log10();
        assert!((psnr(&a, &b) - expect).abs() < 0.3);
    }

    #[test]
    fn ssim_cases() {
        let chk = Array2::from_shape_fn((32, 32), |(i, j)| ((i + j) % 2) as f64);
        assert_eq!(ssim_luma(&chk, &chk), 1.0);
        assert!(ssim_luma(&chk, &chk.mapv(|v| 1.0 - v)) < 0.0);
        let c = Array2::from_elem((16, 16), 0.3);
        assert!((ssim_map(&c, &c).mean().unwrap() - 1.0).abs() < 1e-12);
        let x = Array2::from_shape_fn((16, 16), |(i, j)| ((i * j) % 7) as f64 / 7.0);
        let s = ssim_luma(&x, &x.mapv(|v| 0.9 * v));
        assert!(s > 0.0 && s < 1.0);
    }

    fn frame(data: Array3<f64>) -> FrameImage {
        FrameImage { data, color_space: ColorSpace::Rgb }
    }

    #[test]
    fn cbcr_cases() {
        let a = frame(Array3::from_shape_fn((3, 8, 8), |(c, i, j)| 0.2 + 0.05 * c as f64 + 0.01 * (i + j) as f64));
        assert_eq!(cbcr_psnr(&a, &a).unwrap(), PSNR_CAP);
        let grey_shift = frame(a.data.mapv(|v| v + 0.03));
        assert!(cbcr_psnr(&a, &grey_shift).unwrap() > 80.0);
        // shift Cb by 0.01 and Cr by 0.01 through the inverse transform
        let shifted = {
            let y = a.to_ycbcr().unwrap();
            let mut d = y.data.clone();
            d.slice_mut(ndarray::s![1..3, .., ..]).mapv_inplace(|v| v + 0.01);
            FrameImage { data: d, color_space: ColorSpace::YCbCr }
        };
        let back = FrameImage {
            data: Array3::from_shape_fn((3, 8, 8), |(c, i, j)| {
                crate::media::ycbcr_to_rgb_px([shifted.data[[0, i, j]], shifted.data[[1, i, j]], shifted.data[[2, i, j]]])[c]
            }),
            color_space: ColorSpace::Rgb,
        };
        assert!((cbcr_psnr(&a, &back).unwrap() - 40.0).abs() < 1e-6);
    }

    #[test]
    fn flicker_cases() {
        let stat = VideoClip::new(Array4::from_elem((4, 3, 8, 8), 0.4), ColorSpace::Rgb).unwrap();
        assert!(chroma_flicker(&stat).abs() < 1e-15);
        let d = 0.02;
        let alt = Array4::from_shape_fn((5, 3, 8, 8), |(t, c, _, _)| match c {
            0 => 0.5,
            1 => 0.5 + if t % 2 == 0 { d } else { -d },
            _ => 0.5,
        });
        let alt = VideoClip::new(alt, ColorSpace::YCbCr).unwrap();
        assert!((chroma_flicker(&alt) - d).abs() < 1e-12);
    }

    #[test]
    fn correlation_cases() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let e = Array2::from_shape_fn((64, 64), |_| r.random_range(0.01..0.2));
        let s = e.mapv(|v: f64| 2.0 * (3.0 * v).ln());
        assert!((err_unc_correlation(&e, &s) - 1.0).abs() < 1e-9);
        let a: Vec<f64> = (0..10_000).map(|_| r.random()).collect();
        let b: Vec<f64> = (0..10_000).map(|_| r.random()).collect();
        assert!(pearson(&a, &b).abs() < 0.05);
        let neg: Vec<f64> = a.iter().map(|v| -2.0 * v).collect();
        assert!((pearson(&a, &neg) + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&a, &vec![1.0; a.len()]), 0.0);
    }

    #[test]
    fn seam_cases() {
        let plan = plan_tiles(64, 64, 32, 0).unwrap();
        assert_eq!(seam_score(&Array2::from_elem((64, 64), 0.3), &plan), 0.0);
        let step = Array2::from_shape_fn((64, 64), |(i, j)| 0.1 * ((i >= 32) as u8 + (j >= 32) as u8) as f64);
        assert!((seam_score(&step, &plan) - 0.1).abs() < 1e-12);
        let smooth = Array2::from_shape_fn((64, 64), |(i, j)| (i + j) as f64 / 128.0);
        assert!(seam_score(&smooth, &plan) < 1e-12);
    }
}
