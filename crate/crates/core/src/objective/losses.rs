use crate::autograd::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

/// Added under the square root of gradient magnitudes so they stay
/// differentiable on flat regions.
const MAG_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_u: f64,
    pub lambda_hf: f64,
    pub lambda_g: f64,
    pub lambda_c: f64,
    pub eps_c: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_u: 0.02, lambda_hf: 0.10, lambda_g: 0.05, lambda_c: 0.03, eps_c: 1e-3 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [
            ("lambda_u", self.lambda_u),
            ("lambda_hf", self.lambda_hf),
            ("lambda_g", self.lambda_g),
            ("lambda_c", self.lambda_c),
            ("eps_c", self.eps_c),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss.{k} must be a non-negative number, got {v}")));
            }
        }
        Ok(())
    }

    /// Auxiliary weights halved, as used during warm-up.
    pub fn warmup(&self) -> Self {
        Self { lambda_hf: self.lambda_hf * 0.5, lambda_g: self.lambda_g * 0.5, lambda_c: self.lambda_c * 0.5, ..*self }
    }
}

/// Scalar loss terms of one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub main: f64,
    pub hf: f64,
    pub grad: f64,
    pub chr: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.main, self.hf, self.grad, self.chr, self.total].iter().all(|v| v.is_finite())
    }

    pub(crate) fn scaled_add(&mut self, o: &LossBreakdown, s: f64) {
        self.main += s * o.main;
        self.hf += s * o.hf;
        self.grad += s * o.grad;
        self.chr += s * o.chr;
        self.total += s * o.total;
    }
}

/// `sqrt((a − b)² + ε²)` elementwise.
pub fn charbonnier(a: &Array3<f64>, b: &Array3<f64>, eps: f64) -> Array3<f64> {
    let mut out = a - b;
    out.mapv_inplace(|d| (d * d + eps * eps).sqrt());
    out
}

/// `mean(ρ(ŷ, y)·exp(−s) + λ_u·s)` with `s` broadcast over channels.
pub fn hetero_main_loss(pred: &Array3<f64>, target: &Array3<f64>, s: &Array2<f64>, lambda_u: f64, eps: f64) -> f64 {
    let rho = charbonnier(pred, target, eps);
    let (c, h, w) = rho.dim();
    let mut acc = 0.0;
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let sv = s[[i, j]];
                acc += rho[[ch, i, j]] * (-sv).exp() + lambda_u * sv;
            }
        }
    }
    acc / (c * h * w) as f64
}

pub const LAPLACIAN: [f64; 9] = [0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0];
pub const SOBEL_X: [f64; 9] = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
pub const SOBEL_Y: [f64; 9] = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];

fn fixed_filter(g: &mut Graph, x: Var, k: &[f64; 9]) -> Var {
    let c = g.shape(x)[1];
    let w: Vec<f64> = (0..c).flat_map(|_| k.iter().copied()).collect();
    let w = g.constant(Tensor::new(&[c, 3, 3], w).expect("3×3 filter"));
    g.dw_spatial(x, w, None)
}

/// Elementwise Charbonnier map in the graph.
pub fn charbonnier_graph(g: &mut Graph, a: Var, b: Var, eps: f64) -> Var {
    let d = g.sub(a, b);
    let d2 = g.square(d);
    let d2 = g.affine(d2, 1.0, eps * eps);
    g.sqrt(d2)
}

/// `sqrt(gx² + gy² + tiny)` of Sobel responses.
pub fn sobel_magnitude_graph(g: &mut Graph, x: Var) -> Var {
    let gx = fixed_filter(g, x, &SOBEL_X);
    let gy = fixed_filter(g, x, &SOBEL_Y);
    let gx2 = g.square(gx);
    let gy2 = g.square(gy);
    let s = g.add(gx2, gy2);
    let s = g.affine(s, 1.0, MAG_EPS);
    g.sqrt(s)
}

/// Graph handles of the loss terms.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub main: Var,
    pub hf: Var,
    pub grad: Var,
    pub chr: Var,
    pub total: Var,
}

impl LossVars {
    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        let v = |x: Var| g.value(x).data()[0];
        LossBreakdown { main: v(self.main), hf: v(self.hf), grad: v(self.grad), chr: v(self.chr), total: v(self.total) }
    }
}

/// Builds every loss term. `pred_*`/`target_*` are `[1, 3, H, W]`;
/// `log_var` is `[1, 1, H, W]` or `None` for `s ≡ 0`.
pub fn total_loss_graph(
    g: &mut Graph,
    pred_rgb: Var,
    pred_ycc: Var,
    target_rgb: Var,
    target_ycc: Var,
    log_var: Option<Var>,
    w: &LossWeights,
) -> LossVars {
    let rho = charbonnier_graph(g, pred_rgb, target_rgb, w.eps_c);
    let main = match log_var {
        Some(s) => {
            let neg = g.affine(s, -1.0, 0.0);
            let e = g.exp(neg);
            let weighted = g.mul_gate(rho, e);
            let m1 = g.mean(weighted);
            let ms = g.mean(s);
            let reg = g.affine(ms, w.lambda_u, 0.0);
            g.add(m1, reg)
        }
        None => g.mean(rho),
    };
    let py = g.slice_channels(pred_ycc, 0, 1);
    let ty = g.slice_channels(target_ycc, 0, 1);
    let lp = fixed_filter(g, py, &LAPLACIAN);
    let lt = fixed_filter(g, ty, &LAPLACIAN);
    let hf_map = charbonnier_graph(g, lp, lt, w.eps_c);
    let hf = g.mean(hf_map);
    let mp = sobel_magnitude_graph(g, py);
    let mt = sobel_magnitude_graph(g, ty);
    let dm = g.sub(mp, mt);
    let dm = g.abs(dm);
    let grad = g.mean(dm);
    let pc = g.slice_channels(pred_ycc, 1, 2);
    let tc = g.slice_channels(target_ycc, 1, 2);
    let chr_map = charbonnier_graph(g, pc, tc, w.eps_c);
    let chr = g.mean(chr_map);
    let a = g.affine(hf, w.lambda_hf, 0.0);
    let b = g.affine(grad, w.lambda_g, 0.0);
    let c = g.affine(chr, w.lambda_c, 0.0);
    let t = g.add(main, a);
    let t = g.add(t, b);
    let total = g.add(t, c);
    LossVars { main, hf, grad, chr, total }
}

/// Loss terms for standalone frames (RGB `3×H×W`, optional `H×W` log-variance).
pub fn total_loss(pred_rgb: &Array3<f64>, target_rgb: &Array3<f64>, log_var: Option<&Array2<f64>>, w: &LossWeights) -> Result<LossBreakdown> {
    if pred_rgb.dim() != target_rgb.dim() || pred_rgb.dim().0 != 3 {
        return Err(Error::Shape("total_loss expects matching 3×H×W frames".into()));
    }
    let (_, h, wd) = pred_rgb.dim();
    let mut g = Graph::new();
    let to4 = |a: &Array3<f64>| Tensor::new(&[1, 3, h, wd], a.iter().copied().collect()).expect("frame");
    let p = g.constant(to4(pred_rgb));
    let t = g.constant(to4(target_rgb));
    let pc = crate::network::rgb_to_ycbcr_graph(&mut g, p);
    let tc = crate::network::rgb_to_ycbcr_graph(&mut g, t);
    let s = log_var.map(|s| g.constant(Tensor::new(&[1, 1, h, wd], s.iter().copied().collect()).expect("map")));
    let lv = total_loss_graph(&mut g, p, pc, t, tc, s, w);
    Ok(lv.breakdown(&g))
}
