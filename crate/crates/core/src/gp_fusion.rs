//! Sparse GP-guided local posterior and uncertainty-gated fusion.
//!
//! Dense stage descriptors are compared with a small set of pooled inducing
//! tokens through a spatio-temporal RBF kernel. Channel-softmax assignment
//! weights mix the per-token predictive moments into a per-location mean
//! and variance, which drive a gate blending a temporal branch with a
//! spatial detail branch. The attention and deterministic-gate variants
//! used for ablations share the same block.

use crate::autograd::{softplus, Graph, Init, ParamId, ParamStore, Tensor, Unary, Var};
use crate::layers::{Depthwise, Lin, Pw};
use crate::error::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Floor added inside the log of the uncertainty descriptor.
pub const LOG_EPS: f64 = 1e-6;
/// Floor added to softplus outputs for kernel parameters.
pub const KERNEL_EPS: f64 = 1e-4;
/// Floor added to inducing variances.
pub const VAR_EPS: f64 = 1e-6;
/// Default side of the spatial grid used to pool inducing tokens.
pub const INDUCING_GRID: usize = 4;
/// Hidden width of the fusion gate MLP.
pub const GATE_HIDDEN: usize = 8;
/// Hidden width of the inducing statistics head.
pub const STATS_HIDDEN: usize = 16;

/// How a fusion block forms its gate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// No fusion block at all.
    None,
    /// Gate computed from the resized cue volume only.
    DetGate,
    /// Dot-product attention assignment, variance head retained.
    AttnVar,
    /// `AttnVar` plus temperature, output scale and temporal weight.
    AttnVarP,
    /// RBF kernel assignment.
    Gp,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "det_gate" => Ok(Self::DetGate),
            "attn_var" => Ok(Self::AttnVar),
            "attn_var_p" => Ok(Self::AttnVarP),
            "gp" => Ok(Self::Gp),
            other => Err(Error::Config(format!(
                "unknown fusion mode `{other}` (expected none, det_gate, attn_var, attn_var_p or gp)"
            ))),
        }
    }
}

/// Whether inducing tokens average over frames or keep one grid per frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InducingMode {
    /// One grid averaged over frames, all tokens at `τ = 0.5`.
    Shared,
    /// One grid per frame, tokens carrying their frame time.
    PerFrame,
}

/// Inducing tokens and their predictive moments.
#[derive(Clone, Debug, PartialEq)]
pub struct InducingSet {
    pub tokens: Array2<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub temporal_pos: Vec<f64>,
}

/// Unconstrained kernel parameters; see [`KernelParams::effective`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelParams {
    pub raw_alpha: f64,
    pub raw_ell: f64,
    pub raw_gamma: f64,
}

impl KernelParams {
    /// `(α, ℓ, γ)` as `softplus(raw) + 1e-4`.
    pub fn effective(&self) -> (f64, f64, f64) {
        let f = |r: f64| softplus(r) + KERNEL_EPS;
        (f(self.raw_alpha), f(self.raw_ell), f(self.raw_gamma))
    }
}

/// Per-location posterior moments.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalPosterior {
    pub mean: Vec<f64>,
    /// Clamped at zero.
    pub variance: Vec<f64>,
    /// Variance before the clamp, for auditing cancellation.
    pub raw_variance: Vec<f64>,
}

/// Normalized frame positions `t/(T−1)`; `[0.5]` for a single frame.
pub fn frame_positions(t: usize) -> Vec<f64> {
    if t <= 1 {
        vec![0.5]
    } else {
        (0..t).map(|i| i as f64 / (t - 1) as f64).collect()
    }
}

/// Temporal positions of inducing tokens.
pub fn inducing_positions(t: usize, grid: usize, mode: InducingMode) -> Vec<f64> {
    let cells = grid * grid;
    match mode {
        InducingMode::Shared => vec![0.5; cells],
        InducingMode::PerFrame => frame_positions(t).into_iter().flat_map(|p| std::iter::repeat_n(p, cells)).collect(),
    }
}

/// `K_ij = α·exp(−‖q_i − m_j‖²/(2ℓ²) − (τ_i − τ_j)²/(2γ²))`.
pub fn kernel_matrix(
    q: &Array2<f64>,
    m: &Array2<f64>,
    tau_q: &[f64],
    tau_m: &[f64],
    (alpha, ell, gamma): (f64, f64, f64),
) -> Result<Array2<f64>> {
    if ![alpha, ell, gamma].iter().all(|v| v.is_finite() && *v > 0.0) {
        return Err(Error::Numeric(format!("kernel parameters must be finite and positive, got α={alpha} ℓ={ell} γ={gamma}")));
    }
    if q.ncols() != m.ncols() || q.nrows() != tau_q.len() || m.nrows() != tau_m.len() {
        return Err(Error::Shape("kernel_matrix: inconsistent query/token dimensions".into()));
    }
    let mut k = Array2::zeros((q.nrows(), m.nrows()));
    for i in 0..q.nrows() {
        for j in 0..m.nrows() {
            let d2: f64 = q.row(i).iter().zip(m.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
            let dt = tau_q[i] - tau_m[j];
            k[[i, j]] = alpha * (-d2 / (2.0 * ell * ell) - dt * dt / (2.0 * gamma * gamma)).exp();
        }
    }
    Ok(k)
}

/// Row-wise softmax with max subtraction.
pub fn assignment_weights(k: &Array2<f64>) -> Array2<f64> {
    let mut a = k.clone();
    for mut row in a.rows_mut() {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - mx).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    a
}

/// `μ_i = Σ_j a_ij μ_j`, `σ_i² = Σ_j a_ij(σ_j² + μ_j²) − μ_i²` clamped at 0.
pub fn posterior_moments(a: &Array2<f64>, mu_m: &[f64], var_m: &[f64]) -> Result<LocalPosterior> {
    if a.ncols() != mu_m.len() || mu_m.len() != var_m.len() {
        return Err(Error::Shape("posterior_moments: token count mismatch".into()));
    }
    let mut mean = Vec::with_capacity(a.nrows());
    let mut raw = Vec::with_capacity(a.nrows());
    for row in a.rows() {
        let mu: f64 = row.iter().zip(mu_m).map(|(w, m)| w * m).sum();
        let m2: f64 = row.iter().zip(mu_m.iter().zip(var_m)).map(|(w, (m, v))| w * (v + m * m)).sum();
        mean.push(mu);
        raw.push(m2 - mu * mu);
    }
    let variance = raw.iter().map(|v| v.max(0.0)).collect();
    Ok(LocalPosterior { mean, variance, raw_variance: raw })
}

/// `u_i = [μ_i, log(σ_i² + ε)]`.
pub fn uncertainty_descriptor(p: &LocalPosterior) -> Array2<f64> {
    let mut u = Array2::zeros((p.mean.len(), 2));
    for (i, (m, v)) in p.mean.iter().zip(&p.variance).enumerate() {
        u[[i, 0]] = *m;
        u[[i, 1]] = (v + LOG_EPS).ln();
    }
    u
}

/// Flattens a `[T, d, H, W]` volume into `N×d` tokens in `(t, y, x)` order
/// with their frame positions.
pub fn flatten_tokens(x: &Tensor) -> (Array2<f64>, Vec<f64>) {
    let (t, c, h, w) = x.dims4();
    let taus = frame_positions(t);
    let n = t * h * w;
    let mut out = Array2::zeros((n, c));
    let mut tau = Vec::with_capacity(n);
    for f in 0..t {
        for p in 0..h * w {
            let row = f * h * w + p;
            for ch in 0..c {
                out[[row, ch]] = x.plane(f, ch)[p];
            }
            tau.push(taus[f]);
        }
    }
    (out, tau)
}

/// Average-pools a descriptor volume onto the inducing grid.
pub fn pool_inducing_tokens(d: &Tensor, grid: usize, mode: InducingMode) -> Result<Array2<f64>> {
    let (_, c, h, w) = d.dims4();
    if h < grid || w < grid {
        return Err(Error::Config(format!("stage resolution {h}×{w} is smaller than the {grid}×{grid} inducing grid")));
    }
    let pooled = crate::autograd::kernels::grid_pool(d, grid, mode == InducingMode::PerFrame);
    let m = pooled.len() / c;
    Ok(Array2::from_shape_vec((m, c), pooled.into_data()).expect("pooled shape"))
}

/// Shape hyperparameters of a fusion block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionConfig {
    pub width: usize,
    pub cue_channels: usize,
    pub global_dim: usize,
    pub mode: FusionMode,
    pub inducing: InducingMode,
    /// Side of the pooling grid; `grid²` inducing tokens per grid.
    pub grid: usize,
}

/// Learnable parameters of one fusion block. Absent groups are `None` for
/// variants that do not use them.
#[derive(Clone, Debug)]
pub struct FusionBlock {
    pub cfg: FusionConfig,
    desc_f: Option<Pw>,
    desc_c: Option<Pw>,
    desc_g: Option<ParamId>,
    query: Option<Pw>,
    stats1: Option<Lin>,
    stats2: Option<Lin>,
    /// Raw α, ℓ, γ (GP) or temperature, scale, temporal weight (AttnVarP).
    scalars: Option<[ParamId; 3]>,
    gate1: Pw,
    gate2: Pw,
    temporal_dw: Depthwise,
    temporal_pw: Pw,
    detail_dw: Depthwise,
    detail_pw: Pw,
    hf_dw: Depthwise,
    hf_pw: Pw,
    out: Pw,
    beta: ParamId,
}

/// Graph handles to the per-location maps of one block, each `[T,1,H,W]`.
#[derive(Clone, Copy, Debug)]
pub struct FusionDiagnostics {
    pub mean: Var,
    pub variance: Var,
    pub gate: Var,
}

/// Intermediate values of the posterior path, exposed for tests.
#[derive(Clone, Copy, Debug)]
pub struct PosteriorVars {
    pub descriptor: Var,
    pub inducing: Var,
    pub queries: Var,
    pub inducing_mean: Var,
    pub inducing_var: Var,
    pub logits: Var,
    pub assignment: Var,
    pub mean: Var,
    pub variance: Var,
    pub uncertainty: Var,
}

impl FusionBlock {
    pub fn new(init: &mut Init<'_>, cfg: FusionConfig) -> Result<Self> {
        let c = cfg.width;
        let posterior = matches!(cfg.mode, FusionMode::Gp | FusionMode::AttnVar | FusionMode::AttnVarP);
        if cfg.mode == FusionMode::None {
            return Err(Error::Config("fusion mode `none` has no block".into()));
        }
        let (desc_f, desc_c, desc_g, query, stats1, stats2) = if posterior {
            let g_bound = 1.0 / (cfg.global_dim as f64).sqrt();
            (
                Some(Pw::new(init, "desc_f", c, c, true)),
                Some(Pw::new(init, "desc_c", c, cfg.cue_channels, false)),
                Some(init.uniform("desc_g.weight", &[c, cfg.global_dim], g_bound)),
                Some(Pw::new(init, "query", c, c, false)),
                Some(Lin::new(init, "stats1", STATS_HIDDEN, c)),
                Some(Lin::new(init, "stats2", 2, STATS_HIDDEN)),
            )
        } else {
            (None, None, None, None, None, None)
        };
        let scalars = match cfg.mode {
            FusionMode::Gp => Some([
                init.normal("kernel.raw_alpha", &[1], 1.0),
                init.normal("kernel.raw_ell", &[1], 1.0),
                init.normal("kernel.raw_gamma", &[1], 1.0),
            ]),
            FusionMode::AttnVarP => Some([
                init.constant("attn.temperature", &[1], 1.0),
                init.constant("attn.scale", &[1], 1.0),
                init.constant("attn.temporal_weight", &[1], 0.0),
            ]),
            _ => None,
        };
        let gate_in = if cfg.mode == FusionMode::DetGate { cfg.cue_channels } else { 2 };
        Ok(Self {
            cfg,
            desc_f,
            desc_c,
            desc_g,
            query,
            stats1,
            stats2,
            scalars,
            gate1: Pw::new(init, "gate1", GATE_HIDDEN, gate_in, true),
            gate2: Pw::new(init, "gate2", 1, GATE_HIDDEN, true),
            temporal_dw: Depthwise::new(init, "temporal.dw", c, false),
            temporal_pw: Pw::new(init, "temporal.pw", c, c, true),
            detail_dw: Depthwise::new(init, "detail.dw", c, true),
            detail_pw: Pw::new(init, "detail.pw", c, c, true),
            hf_dw: Depthwise::new(init, "hf.dw", c, true),
            hf_pw: Pw::new(init, "hf.pw", c, c, true),
            out: Pw::new(init, "out", c, 2 * c, true),
            beta: init.constant("beta", &[1], 0.1),
        })
    }

    /// `D = W_d·F + W_c·cue + W_g·g` at every location.
    pub fn build_descriptor(&self, g: &mut Graph, store: &ParamStore, f: Var, cue: Var, gctx: Var) -> Result<Var> {
        let (df, dc, dg) = match (self.desc_f, self.desc_c, self.desc_g) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(Error::Config("this fusion variant has no descriptor".into())),
        };
        let fs = g.shape(f).to_vec();
        let cs = g.shape(cue).to_vec();
        if fs[0] != cs[0] || fs[2] != cs[2] || fs[3] != cs[3] {
            return Err(Error::Shape(format!("cue volume {cs:?} does not match stage features {fs:?}")));
        }
        let a = df.apply(g, store, f);
        let b = dc.apply(g, store, cue);
        let s = g.add(a, b);
        let wg = g.param(store, dg);
        let gl = g.shape(gctx).iter().product::<usize>();
        let gr = g.reshape(gctx, &[1, gl]);
        let proj = g.linear(gr, wg, None);
        let proj = g.reshape(proj, &[self.cfg.width]);
        Ok(g.add_channel(s, proj))
    }

    /// Pools the inducing tokens and predicts their moments `(m, μ_M, σ²_M)`
    /// with `μ_M`, `σ²_M` as `[1, M]` rows.
    fn inducing(&self, g: &mut Graph, store: &ParamStore, d: Var) -> Result<(Var, Var, Var)> {
        let s = g.shape(d).to_vec();
        let grid = self.cfg.grid;
        if s[2] < grid || s[3] < grid {
            return Err(Error::Config(format!(
                "stage resolution {}×{} is smaller than the {grid}×{grid} inducing grid",
                s[2], s[3]
            )));
        }
        let m = g.grid_pool(d, grid, self.cfg.inducing == InducingMode::PerFrame);
        let h = self.stats1.unwrap().apply(g, store, m);
        let h = g.silu(h);
        let st = self.stats2.unwrap().apply(g, store, h);
        let n = g.shape(m)[0];
        let mu = g.slice_cols(st, 0, 1);
        let mu = g.reshape(mu, &[1, n]);
        let v = g.slice_cols(st, 1, 1);
        let v = g.softplus(v);
        let v = g.affine(v, 1.0, VAR_EPS);
        let v = g.reshape(v, &[1, n]);
        Ok((m, mu, v))
    }

    fn positive(&self, g: &mut Graph, store: &ParamStore, id: ParamId) -> Var {
        let r = g.param(store, id);
        let s = g.softplus(r);
        g.affine(s, 1.0, KERNEL_EPS)
    }

    /// Descriptor through uncertainty descriptor for the posterior variants.
    pub fn posterior(&self, g: &mut Graph, store: &ParamStore, f: Var, cue: Var, gctx: Var) -> Result<PosteriorVars> {
        let d = self.build_descriptor(g, store, f, cue, gctx)?;
        let (m, mu_m, var_m) = self.inducing(g, store, d)?;
        let q = self.query.unwrap().apply(g, store, d);
        let t = g.shape(d)[0];
        let c = self.cfg.width as f64;
        let tau_q = frame_positions(t);
        let tau_m = inducing_positions(t, self.cfg.grid, self.cfg.inducing);
        let logits = match self.cfg.mode {
            FusionMode::Gp => {
                let [ra, rl, rg] = self.scalars.unwrap();
                let alpha = self.positive(g, store, ra);
                let ell = self.positive(g, store, rl);
                let gamma = self.positive(g, store, rg);
                g.rbf_kernel(q, m, alpha, ell, gamma, tau_q, tau_m)
            }
            FusionMode::AttnVar | FusionMode::AttnVarP => {
                let dot = g.pointwise(q, m, None);
                let dot = g.affine(dot, 1.0 / c.sqrt(), 0.0);
                if self.cfg.mode == FusionMode::AttnVar {
                    dot
                } else {
                    let [temp, scale, wt] = self.scalars.unwrap();
                    let temp = g.param(store, temp);
                    let inv = g.unary(temp, Unary::Recip);
                    let scale = g.param(store, scale);
                    let wt = g.param(store, wt);
                    let x = g.scale_by(dot, scale);
                    let x = g.scale_by(x, inv);
                    let sh = g.shape(x).to_vec();
                    let mut dt = Tensor::zeros(&sh);
                    let plane = sh[2] * sh[3];
                    for f in 0..sh[0] {
                        for j in 0..sh[1] {
                            let v = (tau_q[f] - tau_m[j]).powi(2);
                            let off = (f * sh[1] + j) * plane;
                            dt.data_mut()[off..off + plane].iter_mut().for_each(|e| *e = v);
                        }
                    }
                    let dt = g.constant(dt);
                    let pen = g.scale_by(dt, wt);
                    g.sub(x, pen)
                }
            }
            _ => unreachable!("posterior requested for a non-posterior variant"),
        };
        let a = g.softmax_channels(logits);
        let mean = g.pointwise(a, mu_m, None);
        let mu2 = g.square(mu_m);
        let second = g.add(var_m, mu2);
        let e2 = g.pointwise(a, second, None);
        let mean_sq = g.square(mean);
        let raw = g.sub(e2, mean_sq);
        let variance = g.clamp(raw, 0.0, f64::INFINITY);
        let vl = g.affine(variance, 1.0, LOG_EPS);
        let lv = g.log(vl);
        let uncertainty = g.concat(&[mean, lv]);
        Ok(PosteriorVars {
            descriptor: d,
            inducing: m,
            queries: q,
            inducing_mean: mu_m,
            inducing_var: var_m,
            logits,
            assignment: a,
            mean,
            variance,
            uncertainty,
        })
    }

    /// `G = sigmoid(W₂·SiLU(W₁·u))`, one scalar per location.
    pub fn gate(&self, g: &mut Graph, store: &ParamStore, u: Var) -> Var {
        let h = self.gate1.apply(g, store, u);
        let h = g.silu(h);
        let z = self.gate2.apply(g, store, h);
        g.sigmoid(z)
    }

    pub fn temporal_branch(&self, g: &mut Graph, store: &ParamStore, f: Var) -> Var {
        let x = self.temporal_dw.apply(g, store, f);
        self.temporal_pw.apply(g, store, x)
    }

    pub fn detail_branch(&self, g: &mut Graph, store: &ParamStore, f: Var) -> Var {
        let x = self.detail_dw.apply(g, store, f);
        self.detail_pw.apply(g, store, x)
    }

    pub fn highfreq_branch(&self, g: &mut Graph, store: &ParamStore, f: Var) -> Var {
        let x = self.hf_dw.apply(g, store, f);
        let x = g.silu(x);
        self.hf_pw.apply(g, store, x)
    }

    /// `F + W_o[G⊙T(F); (1−G)⊙D(F)] + β·H(F)`.
    pub fn fuse(&self, g: &mut Graph, store: &ParamStore, f: Var, gate: Var) -> Var {
        let t = self.temporal_branch(g, store, f);
        let d = self.detail_branch(g, store, f);
        let h = self.highfreq_branch(g, store, f);
        let gt = g.mul_gate(t, gate);
        let inv = g.affine(gate, -1.0, 1.0);
        let gd = g.mul_gate(d, inv);
        let cat = g.concat(&[gt, gd]);
        let mixed = self.out.apply(g, store, cat);
        let beta = g.param(store, self.beta);
        let hb = g.scale_by(h, beta);
        let y = g.add(f, mixed);
        g.add(y, hb)
    }

    /// Full block. `cue` must already be at the stage resolution; `gctx` is
    /// the clip-level context vector.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, f: Var, cue: Var, gctx: Var) -> Result<(Var, FusionDiagnostics)> {
        let (gate, mean, variance) = if self.cfg.mode == FusionMode::DetGate {
            let gate = self.gate(g, store, cue);
            let zero = g.affine(gate, 0.0, 0.0);
            (gate, zero, zero)
        } else {
            let p = self.posterior(g, store, f, cue, gctx)?;
            (self.gate(g, store, p.uncertainty), p.mean, p.variance)
        };
        let out = self.fuse(g, store, f, gate);
        Ok((out, FusionDiagnostics { mean, variance, gate }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn kernel_golden_two_by_two() {
        let q = array![[0.0, 0.0], [1.0, 0.0]];
        let m = array![[0.0, 1.0], [1.0, 0.0]];
        let k = kernel_matrix(&q, &m, &[0.0, 1.0], &[0.5, 0.5], (1.0, 1.0, 1.0)).unwrap();
        // exponents: -(1/2) - 0.125, -(1/2) - 0.125, -(2/2) - 0.125, 0 - 0.125
        assert!((k[[0, 0]] - (-0.625f64).exp()).abs() < 1e-15);
        assert!((k[[0, 1]] - (-0.625f64).exp()).abs() < 1e-15);
        assert!((k[[1, 0]] - (-1.125f64).exp()).abs() < 1e-15);
        assert!((k[[1, 1]] - (-0.125f64).exp()).abs() < 1e-15);
        let same = kernel_matrix(&q, &q, &[0.3, 0.3], &[0.3, 0.3], (0.7, 2.0, 1.0)).unwrap();
        assert_eq!(same[[0, 0]], 0.7);
        assert!(kernel_matrix(&q, &m, &[0.0, 1.0], &[0.5, 0.5], (f64::NAN, 1.0, 1.0)).is_err());
    }

    #[test]
    fn softmax_golden() {
        let a = assignment_weights(&array![[0.0, 3f64.ln()], [2.0, 2.0]]);
        assert!((a[[0, 0]] - 0.25).abs() < 1e-15 && (a[[0, 1]] - 0.75).abs() < 1e-15);
        assert_eq!(a[[1, 0]], 0.5);
    }

    #[test]
    fn posterior_hand_values() {
        let p = posterior_moments(&array![[0.5, 0.5]], &[0.0, 2.0], &[1.0, 1.0]).unwrap();
        assert!((p.mean[0] - 1.0).abs() < 1e-15);
        assert!((p.variance[0] - 2.0).abs() < 1e-15);
        let p = posterior_moments(&array![[0.2, 0.8], [0.9, 0.1]], &[0.3, 0.3], &[0.5, 0.5]).unwrap();
        for i in 0..2 {
            assert!((p.mean[i] - 0.3).abs() < 1e-15);
            assert!((p.variance[i] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn uncertainty_floor() {
        let p = LocalPosterior { mean: vec![0.0, 0.0], variance: vec![0.0, 1.0 - LOG_EPS], raw_variance: vec![0.0, 0.0] };
        let u = uncertainty_descriptor(&p);
        assert!((u[[0, 1]] - (1e-6f64).ln()).abs() < 1e-12);
        assert!(u[[1, 1]].abs() < 1e-15);
    }

    #[test]
    fn kernel_params_positive() {
        let kp = KernelParams { raw_alpha: -40.0, raw_ell: 0.0, raw_gamma: 3.0 };
        let (a, l, g) = kp.effective();
        assert!(a > 0.0 && l > 0.0 && g > 0.0);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("attn_var_p".parse::<FusionMode>().unwrap(), FusionMode::AttnVarP);
        assert!(matches!("attn".parse::<FusionMode>(), Err(Error::Config(_))));
    }
}
