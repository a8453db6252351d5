//! Noise cues from the luminance clip: absolute forward differences along
//! x, y and t, the 3×3 local variance, and a learned pointwise projection.

use crate::autograd::{Graph, Init, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use ndarray::{s, Array4};

/// Number of raw cue channels.
pub const RAW_CUES: usize = 4;

/// Raw cues plus (optionally) their learned projection.
#[derive(Clone, Debug)]
pub struct CueVolume {
    /// `T×4×H×W`: |∂x Y|, |∂y Y|, |∂t Y|, Var₃ₓ₃(Y).
    pub raw: Array4<f64>,
    pub projected: Option<Array4<f64>>,
}

fn check_luma(y: &Array4<f64>) -> Result<()> {
    if y.dim().1 != 1 {
        return Err(Error::Shape(format!("luminance must have one channel, got {}", y.dim().1)));
    }
    Ok(())
}

/// Forward differences with replicate boundaries; the last column, row or
/// frame difference is zero.
pub fn luminance_derivatives(y: &Array4<f64>) -> Result<Array4<f64>> {
    check_luma(y)?;
    let (t, _, h, w) = y.dim();
    let mut out = Array4::zeros((t, 3, h, w));
    for f in 0..t {
        for i in 0..h {
            for j in 0..w {
                let v = y[[f, 0, i, j]];
                if j + 1 < w {
                    out[[f, 0, i, j]] = (y[[f, 0, i, j + 1]] - v).abs();
                }
                if i + 1 < h {
                    out[[f, 1, i, j]] = (y[[f, 0, i + 1, j]] - v).abs();
                }
                if f + 1 < t {
                    out[[f, 2, i, j]] = (y[[f + 1, 0, i, j]] - v).abs();
                }
            }
        }
    }
    Ok(out)
}

/// Variance over the replicate-padded 3×3 neighbourhood as
/// `E[x²] − E[x]²`, clamped at zero. Values are centred on the window
/// mean first so the subtraction does not cancel catastrophically.
pub fn local_variance_3x3(y: &Array4<f64>) -> Result<Array4<f64>> {
    check_luma(y)?;
    let (t, _, h, w) = y.dim();
    if h < 3 || w < 3 {
        return Err(Error::Shape(format!("local variance needs at least 3×3 frames, got {h}×{w}")));
    }
    let mut out = Array4::zeros((t, 1, h, w));
    let mut win = [0.0; 9];
    for f in 0..t {
        for i in 0..h {
            for j in 0..w {
                let mut k = 0;
                for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        let ii = (i as i64 + di).clamp(0, h as i64 - 1) as usize;
                        let jj = (j as i64 + dj).clamp(0, w as i64 - 1) as usize;
                        win[k] = y[[f, 0, ii, jj]];
                        k += 1;
                    }
                }
                let c = win[4];
                let m1 = win.iter().map(|v| v - c).sum::<f64>() / 9.0;
                let m2 = win.iter().map(|v| (v - c).powi(2)).sum::<f64>() / 9.0;
                out[[f, 0, i, j]] = (m2 - m1 * m1).max(0.0);
            }
        }
    }
    Ok(out)
}

/// The four raw channels stacked as `T×4×H×W`.
pub fn raw_cues(y: &Array4<f64>) -> Result<Array4<f64>> {
    let d = luminance_derivatives(y)?;
    let v = local_variance_3x3(y)?;
    let (t, _, h, w) = y.dim();
    let mut out = Array4::zeros((t, RAW_CUES, h, w));
    out.slice_mut(s![.., 0..3, .., ..]).assign(&d);
    out.slice_mut(s![.., 3..4, .., ..]).assign(&v);
    Ok(out)
}

/// Learned map ψ: one pointwise layer followed by SiLU.
#[derive(Clone, Copy, Debug)]
pub struct CueProjection {
    pub weight: ParamId,
    pub bias: ParamId,
    pub channels: usize,
}

impl CueProjection {
    pub fn new(init: &mut Init<'_>, channels: usize) -> Self {
        let bound = 1.0 / (RAW_CUES as f64).sqrt();
        Self {
            weight: init.uniform("weight", &[channels, RAW_CUES], bound),
            bias: init.constant("bias", &[channels], 0.0),
            channels,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, raw: Var) -> Result<Var> {
        let c = g.shape(raw)[1];
        if c != RAW_CUES {
            return Err(Error::Shape(format!("cue projection expects {RAW_CUES} channels, got {c}")));
        }
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let z = g.pointwise(raw, w, Some(b));
        Ok(g.silu(z))
    }

    /// Evaluates the projection outside of a training graph.
    pub fn apply(&self, store: &ParamStore, raw: &Array4<f64>) -> Result<Array4<f64>> {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_array4(raw));
        let y = self.forward(&mut g, store, x)?;
        g.value(y).to_array4()
    }
}

/// Raw cues of `y` and, when a projection is given, the projected volume.
pub fn extract_cues(y: &Array4<f64>, projection: Option<(&CueProjection, &ParamStore)>) -> Result<CueVolume> {
    let raw = raw_cues(y)?;
    let projected = match projection {
        Some((p, store)) => Some(p.apply(store, &raw)?),
        None => None,
    };
    Ok(CueVolume { raw, projected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_variance(y: &Array4<f64>, f: usize, i: usize, j: usize) -> f64 {
        let (_, _, h, w) = y.dim();
        let mut vals = vec![];
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                let ii = (i as i64 + di).clamp(0, h as i64 - 1) as usize;
                let jj = (j as i64 + dj).clamp(0, w as i64 - 1) as usize;
                vals.push(y[[f, 0, ii, jj]]);
            }
        }
        let m = vals.iter().sum::<f64>() / 9.0;
        vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 9.0
    }

    #[test]
    fn constant_clip_has_zero_cues() {
        let y = Array4::from_elem((3, 1, 8, 8), 0.37);
        assert!(raw_cues(&y).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_derivative() {
        let w = 10;
        let y = Array4::from_shape_fn((2, 1, 8, w), |(_, _, _, j)| j as f64 / (w - 1) as f64);
        let d = luminance_derivatives(&y).unwrap();
        for i in 0..8 {
            for j in 0..w {
                let expect = if j + 1 < w { 1.0 / (w - 1) as f64 } else { 0.0 };
                assert!((d[[0, 0, i, j]] - expect).abs() < 1e-12);
                assert_eq!(d[[0, 1, i, j]], 0.0);
                assert_eq!(d[[0, 2, i, j]], 0.0);
            }
        }
    }

    #[test]
    fn variance_matches_brute_force() {
        let mut y = Array4::zeros((1, 1, 8, 8));
        y[[0, 0, 4, 4]] = 1.0;
        let v = local_variance_3x3(&y).unwrap();
        assert!((v[[0, 0, 4, 4]] - (1.0 / 9.0) * (1.0 - 1.0 / 9.0)).abs() < 1e-12);
        let checker = Array4::from_shape_fn((1, 1, 9, 9), |(_, _, i, j)| ((i + j) % 2) as f64);
        let vc = local_variance_3x3(&checker).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let rnd = Array4::from_shape_simple_fn((2, 1, 9, 11), || r.random::<f64>());
        let vr = local_variance_3x3(&rnd).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                assert!((vc[[0, 0, i, j]] - brute_variance(&checker, 0, i, j)).abs() < 1e-12);
            }
        }
        let interior = vc[[0, 0, 4, 4]];
        assert!((interior - (5.0 / 9.0 - (5.0f64 / 9.0).powi(2))).abs() < 1e-12);
        for f in 0..2 {
            for i in 0..9 {
                for j in 0..11 {
                    assert!((vr[[f, 0, i, j]] - brute_variance(&rnd, f, i, j)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn projection_shape_and_zero() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = CueProjection::new(&mut Init::new(&mut store, &mut rng), 8);
        let raw = Array4::zeros((5, 4, 8, 8));
        let out = p.apply(&store, &raw).unwrap();
        assert_eq!(out.dim(), (5, 8, 8, 8));
        assert!(out.iter().all(|&v| v == 0.0));
        assert!(matches!(p.apply(&store, &Array4::zeros((1, 3, 8, 8))), Err(Error::Shape(_))));
    }
}
