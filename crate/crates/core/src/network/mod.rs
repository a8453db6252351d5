//! End-to-end restoration network: colour stems, pseudo-3D encoder with
//! fusion blocks, refinement decoder and structure/colour heads.

mod blocks;
mod checkpoint;

pub use blocks::{Downsample, GlobalBranch, Head, P3dConv, Pseudo3dBlock, Upsample, GLOBAL_WIDTHS};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

use crate::autograd::{Graph, Init, ParamStore, Tensor, Var};
use crate::cues::{raw_cues, CueProjection};
use crate::error::{Error, Result};
use crate::gp_fusion::{FusionBlock, FusionConfig, FusionMode, InducingMode};
use crate::media::{rgb_to_ycbcr, ColorSpace, FrameImage, VideoClip, CHROMA_OFFSET, YCBCR_TO_RGB};
use ndarray::{s, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Architecture and ablation switches. Every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub clip_len: usize,
    pub base_width: usize,
    pub stage_depths: Vec<usize>,
    /// 1-based stages that end with a fusion block.
    pub gp_stages: Vec<usize>,
    pub inducing_m: usize,
    pub inducing_mode: InducingMode,
    pub refine_stages: usize,
    pub cue_channels: usize,
    pub global_dim: usize,
    /// Width of each colour stem before fusion.
    pub stem_width: usize,
    /// Channel expansion inside pseudo-3D blocks.
    pub expansion: usize,
    pub head_hidden: usize,
    pub fusion: FusionMode,
    /// Predict a log-variance map and train with the heteroscedastic loss.
    pub hetero: bool,
    /// Separate luminance and chroma heads; otherwise a single RGB head.
    pub yc_head: bool,
    /// High-frequency luminance head (requires `yc_head`).
    pub hf_head: bool,
    pub alpha_h_init: f64,
    pub alpha_c_init: f64,
    pub s_clamp: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            clip_len: 5,
            base_width: 32,
            stage_depths: vec![2, 3, 4],
            gp_stages: vec![2, 3],
            inducing_m: 16,
            inducing_mode: InducingMode::Shared,
            refine_stages: 2,
            cue_channels: 8,
            global_dim: 32,
            stem_width: 16,
            expansion: 2,
            head_hidden: 16,
            fusion: FusionMode::Gp,
            hetero: true,
            yc_head: true,
            hf_head: true,
            alpha_h_init: 0.1,
            alpha_c_init: 0.05,
            s_clamp: 8.0,
        }
    }
}

impl ModelConfig {
    /// Reduced-width model for smoke tests and toy training.
    pub fn tiny(width: usize) -> Self {
        Self {
            base_width: width,
            stem_width: width.max(4),
            head_hidden: width.max(4),
            global_dim: width.max(4),
            cue_channels: 8,
            ..Self::default()
        }
    }

    pub fn stage_width(&self, stage: usize) -> usize {
        self.base_width << (stage - 1)
    }

    pub fn num_stages(&self) -> usize {
        self.stage_depths.len()
    }

    /// Inputs must be divisible by this along both axes.
    pub fn size_multiple(&self) -> usize {
        1 << (self.num_stages() - 1)
    }

    fn grid(&self) -> usize {
        (self.inducing_m as f64).sqrt().round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_stages();
        if n == 0 || self.stage_depths.iter().any(|&d| d == 0) {
            return Err(Error::Config("stage_depths must list positive depths".into()));
        }
        if self.gp_stages.iter().any(|&s| s == 0 || s > n) {
            return Err(Error::Config(format!("gp_stages must lie in 1..={n}, got {:?}", self.gp_stages)));
        }
        if self.refine_stages != n - 1 {
            return Err(Error::Config(format!(
                "refine_stages must equal the number of downsamplings ({}), got {}",
                n - 1,
                self.refine_stages
            )));
        }
        let widths = [
            ("clip_len", self.clip_len),
            ("base_width", self.base_width),
            ("cue_channels", self.cue_channels),
            ("global_dim", self.global_dim),
            ("stem_width", self.stem_width),
            ("expansion", self.expansion),
            ("head_hidden", self.head_hidden),
        ];
        for (k, v) in widths {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        let g = self.grid();
        if g * g != self.inducing_m {
            return Err(Error::Config(format!("inducing_m must be a perfect square, got {}", self.inducing_m)));
        }
        if self.hf_head && !self.yc_head {
            return Err(Error::Config("hf_head requires yc_head".into()));
        }
        if !(self.s_clamp > 0.0) {
            return Err(Error::Config("s_clamp must be positive".into()));
        }
        Ok(())
    }

    /// Checks that an `h×w` input fits the architecture.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let m = self.size_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!("input {h}×{w} must be divisible by {m}")));
        }
        // The deepest stage must hold the inducing grid, and the global
        // branch pools twice by 2.
        let min = (m * self.grid()).max(4);
        if h < min || w < min {
            return Err(Error::Config(format!("input {h}×{w} is smaller than the minimum {min}×{min}")));
        }
        Ok(())
    }

    fn has_fusion(&self, stage: usize) -> bool {
        self.fusion != FusionMode::None && self.gp_stages.contains(&stage)
    }
}

/// The eight ablation variants in increasing order of completeness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Backbone,
    DetGate,
    AttnVar,
    AttnVarP,
    SparseGp,
    Hetero,
    YcHead,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Backbone,
        Variant::DetGate,
        Variant::AttnVar,
        Variant::AttnVarP,
        Variant::SparseGp,
        Variant::Hetero,
        Variant::YcHead,
        Variant::Full,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Variant::Backbone => "Backbone",
            Variant::DetGate => "+Det. gate",
            Variant::AttnVar => "+Attn+Var",
            Variant::AttnVarP => "+Attn+Var+P",
            Variant::SparseGp => "+Sparse GP",
            Variant::Hetero => "+Hetero",
            Variant::YcHead => "+Y/C",
            Variant::Full => "Full (+HF)",
        }
    }

    /// Applies the variant's switches on top of `base`.
    pub fn configure(&self, base: &ModelConfig) -> ModelConfig {
        let (fusion, hetero, yc, hf) = match self {
            Variant::Backbone => (FusionMode::None, false, false, false),
            Variant::DetGate => (FusionMode::DetGate, false, false, false),
            Variant::AttnVar => (FusionMode::AttnVar, false, false, false),
            Variant::AttnVarP => (FusionMode::AttnVarP, false, false, false),
            Variant::SparseGp => (FusionMode::Gp, false, false, false),
            Variant::Hetero => (FusionMode::Gp, true, false, false),
            Variant::YcHead => (FusionMode::Gp, true, true, false),
            Variant::Full => (FusionMode::Gp, true, true, true),
        };
        ModelConfig { fusion, hetero, yc_head: yc, hf_head: hf, ..base.clone() }
    }
}

#[derive(Clone, Debug)]
struct Stage {
    down: Option<Downsample>,
    blocks: Vec<Pseudo3dBlock>,
    fusion: Option<FusionBlock>,
}

#[derive(Clone, Debug)]
struct Refine {
    up: Upsample,
    block: Pseudo3dBlock,
}

#[derive(Clone, Debug)]
enum Heads {
    YCbCr { y: Head, hf: Option<Head>, c: Head, alpha_h: crate::autograd::ParamId, alpha_c: crate::autograd::ParamId },
    Rgb { rgb: Head },
}

/// Weights plus the module layout over them.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub seed: u64,
    stem_y: P3dConv,
    stem_c: P3dConv,
    stem_rgb: P3dConv,
    stem_fuse: crate::layers::Pw,
    cue: CueProjection,
    global: GlobalBranch,
    stages: Vec<Stage>,
    refine: Vec<Refine>,
    heads: Heads,
    s_head: Option<Head>,
}

/// Graph handles of one fusion stage.
#[derive(Clone, Copy, Debug)]
pub struct StageVars {
    pub stage: usize,
    pub diagnostics: crate::gp_fusion::FusionDiagnostics,
}

/// Graph handles produced by [`Model::forward_graph`].
#[derive(Clone, Debug)]
pub struct ForwardVars {
    /// `[1, 3, H, W]` restored RGB in `[0, 1]`.
    pub rgb: Var,
    /// `[1, 3, H, W]` restored YCbCr.
    pub ycbcr: Var,
    /// `[1, 1, H, W]` clamped log-variance, when the model predicts one.
    pub log_var: Option<Var>,
    pub stage_outputs: Vec<Var>,
    pub stages: Vec<StageVars>,
}

/// Per-location maps of one fusion stage, each `T×H_s×W_s`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageDiagnostics {
    pub stage: usize,
    pub mean: Array3<f64>,
    pub variance: Array3<f64>,
    pub gate: Array3<f64>,
}

#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub restored: FrameImage,
    /// Clamped log-variance `s_t`, zero when the model is not heteroscedastic.
    pub log_variance: Array2<f64>,
    pub diagnostics: Vec<StageDiagnostics>,
}

/// Constant graph inputs derived from one clip.
struct Inputs {
    ycc: Var,
    y: Var,
    cbcr: Var,
    rgb: Var,
    raw_cue: Var,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut store, &mut rng);
        let sw = cfg.stem_width;
        let stem_y = P3dConv::new(&mut init.sub("stem.y"), 1, sw);
        let stem_c = P3dConv::new(&mut init.sub("stem.c"), 2, sw);
        let stem_rgb = P3dConv::new(&mut init.sub("stem.rgb"), 3, sw);
        let stem_fuse = crate::layers::Pw::new(&mut init.sub("stem"), "fuse", cfg.base_width, 3 * sw, true);
        let cue = CueProjection::new(&mut init.sub("cue"), cfg.cue_channels);
        let global = GlobalBranch::new(&mut init.sub("global"), 3, cfg.global_dim);
        let mut stages = Vec::new();
        for (i, &depth) in cfg.stage_depths.iter().enumerate() {
            let s = i + 1;
            let w = cfg.stage_width(s);
            let mut si = init.sub(&format!("enc{s}"));
            let down = (s > 1).then(|| Downsample::new(&mut si.sub("down"), cfg.stage_width(s - 1), w));
            let blocks = (0..depth)
                .map(|b| Pseudo3dBlock::new(&mut si.sub(&format!("block{b}")), w, cfg.expansion))
                .collect();
            let fusion = if cfg.has_fusion(s) {
                let fc = FusionConfig {
                    width: w,
                    cue_channels: cfg.cue_channels,
                    global_dim: cfg.global_dim,
                    mode: cfg.fusion,
                    inducing: cfg.inducing_mode,
                    grid: cfg.grid(),
                };
                Some(FusionBlock::new(&mut si.sub("fusion"), fc)?)
            } else {
                None
            };
            stages.push(Stage { down, blocks, fusion });
        }
        let mut refine = Vec::new();
        for r in 0..cfg.refine_stages {
            let s_from = cfg.num_stages() - r;
            let (cin, cout) = (cfg.stage_width(s_from), cfg.stage_width(s_from - 1));
            let mut ri = init.sub(&format!("refine{}", r + 1));
            refine.push(Refine {
                up: Upsample::new(&mut ri.sub("up"), cin, cout),
                block: Pseudo3dBlock::new(&mut ri.sub("block"), cout, cfg.expansion),
            });
        }
        let (bw, hh) = (cfg.base_width, cfg.head_hidden);
        let heads = if cfg.yc_head {
            Heads::YCbCr {
                y: Head::new(&mut init.sub("head.y"), bw, hh, 1),
                hf: cfg.hf_head.then(|| Head::new(&mut init.sub("head.hf"), bw, hh, 1)),
                c: Head::new(&mut init.sub("head.c"), bw, hh, 2),
                alpha_h: init.constant("head.alpha_h", &[1], cfg.alpha_h_init),
                alpha_c: init.constant("head.alpha_c", &[1], cfg.alpha_c_init),
            }
        } else {
            Heads::Rgb { rgb: Head::new(&mut init.sub("head.rgb"), bw, hh, 3) }
        };
        let s_head = cfg.hetero.then(|| Head::new(&mut init.sub("head.s"), bw, hh, 1));
        // Zero output layers: the untrained model passes the noisy centre
        // frame through and predicts s = 0.
        for h in ["y", "hf", "c", "rgb", "s"] {
            store.zero_prefix(&format!("head.{h}.pw2."));
        }
        Ok(Self {
            cfg,
            store,
            seed,
            stem_y,
            stem_c,
            stem_rgb,
            stem_fuse,
            cue,
            global,
            stages,
            refine,
            heads,
            s_head,
        })
    }

    pub fn census(&self) -> usize {
        self.store.census()
    }

    fn check_clip(&self, clip: &VideoClip) -> Result<()> {
        if clip.color_space != ColorSpace::Rgb || clip.channels() != 3 {
            return Err(Error::InvalidInput("the model expects a 3-channel RGB clip".into()));
        }
        if clip.frames() != self.cfg.clip_len {
            return Err(Error::Shape(format!("clip has {} frames, the model expects {}", clip.frames(), self.cfg.clip_len)));
        }
        self.cfg.check_input(clip.height(), clip.width())
    }

    fn inputs(&self, g: &mut Graph, clip: &VideoClip) -> Result<Inputs> {
        let ycc = rgb_to_ycbcr(clip)?;
        let y = ycc.data.slice(s![.., 0..1, .., ..]).to_owned();
        let cbcr = ycc.data.slice(s![.., 1..3, .., ..]).to_owned();
        let raw = raw_cues(&y)?;
        Ok(Inputs {
            ycc: g.constant(Tensor::from_array4(&ycc.data)),
            y: g.constant(Tensor::from_array4(&y)),
            cbcr: g.constant(Tensor::from_array4(&cbcr)),
            rgb: g.constant(Tensor::from_array4(&clip.data)),
            raw_cue: g.constant(Tensor::from_array4(&raw)),
        })
    }

    /// `φ_y(Y) ⊕ φ_c(CbCr) ⊕ φ_r(RGB)` fused to the base width.
    fn stem(&self, g: &mut Graph, store: &ParamStore, x: &Inputs) -> Var {
        let a = self.stem_y.apply(g, store, x.y);
        let b = self.stem_c.apply(g, store, x.cbcr);
        let c = self.stem_rgb.apply(g, store, x.rgb);
        let cat = g.concat(&[a, b, c]);
        self.stem_fuse.apply(g, store, cat)
    }

    /// Builds the forward pass into `g` using weights from `store` (which
    /// must share this model's layout).
    pub fn forward_graph(&self, g: &mut Graph, store: &ParamStore, clip: &VideoClip) -> Result<ForwardVars> {
        self.check_clip(clip)?;
        let x = self.inputs(g, clip)?;
        let f0 = self.stem(g, store, &x);
        let cue = self.cue.forward(g, store, x.raw_cue)?;
        let gctx = self.global.apply(g, store, x.ycc);

        let mut f = f0;
        let mut stage_cue = cue;
        let mut outputs = Vec::new();
        let mut diags = Vec::new();
        for (i, st) in self.stages.iter().enumerate() {
            if let Some(d) = &st.down {
                f = d.apply(g, store, f);
                stage_cue = g.avg_pool2(stage_cue);
            }
            for b in &st.blocks {
                f = b.apply(g, store, f);
            }
            if let Some(fb) = &st.fusion {
                let (out, d) = fb.forward(g, store, f, stage_cue, gctx)?;
                f = out;
                diags.push(StageVars { stage: i + 1, diagnostics: d });
            }
            outputs.push(f);
        }

        let mut z = f;
        for (r, rf) in self.refine.iter().enumerate() {
            let skip = outputs[self.cfg.num_stages() - 2 - r];
            let up = rf.up.apply(g, store, z);
            let merged = g.add(up, skip);
            z = rf.block.apply(g, store, merged);
        }
        let t = self.cfg.clip_len;
        let zc = g.slice_time(z, t / 2, 1);
        let center_ycc = g.slice_time(x.ycc, t / 2, 1);
        let center_rgb = g.slice_time(x.rgb, t / 2, 1);

        let (rgb, ycbcr) = match &self.heads {
            Heads::YCbCr { y, hf, c, alpha_h, alpha_c } => {
                let xy = g.slice_channels(center_ycc, 0, 1);
                let xc = g.slice_channels(center_ycc, 1, 2);
                let hy = y.apply(g, store, zc);
                let mut ly = g.add(xy, hy);
                if let Some(hf) = hf {
                    let h = hf.apply(g, store, zc);
                    let ah = g.param(store, *alpha_h);
                    let h = g.scale_by(h, ah);
                    ly = g.add(ly, h);
                }
                let ly = g.clamp(ly, 0.0, 1.0);
                let hc = c.apply(g, store, zc);
                let ac = g.param(store, *alpha_c);
                let hc = g.scale_by(hc, ac);
                let lc = g.add(xc, hc);
                let lc = g.clamp(lc, 0.0, 1.0);
                let ycc = g.concat(&[ly, lc]);
                (ycbcr_to_rgb_graph(g, ycc), ycc)
            }
            Heads::Rgb { rgb } => {
                let h = rgb.apply(g, store, zc);
                let out = g.add(center_rgb, h);
                let out = g.clamp(out, 0.0, 1.0);
                (out, rgb_to_ycbcr_graph(g, out))
            }
        };
        let log_var = self.s_head.as_ref().map(|h| {
            let s = h.apply(g, store, zc);
            g.clamp(s, -self.cfg.s_clamp, self.cfg.s_clamp)
        });
        Ok(ForwardVars { rgb, ycbcr, log_var, stage_outputs: outputs, stages: diags })
    }

    /// Inference on one clip with the model's own weights.
    pub fn forward(&self, clip: &VideoClip) -> Result<ModelOutput> {
        let mut g = Graph::new();
        let v = self.forward_graph(&mut g, &self.store, clip)?;
        let rgb = g.value(v.rgb).to_array4()?.index_axis_move(Axis(0), 0);
        let restored = FrameImage::new(rgb, ColorSpace::Rgb)?;
        let (h, w) = (clip.height(), clip.width());
        let log_variance = match v.log_var {
            Some(s) => Array2::from_shape_vec((h, w), g.value(s).data().to_vec()).expect("s shape"),
            None => Array2::zeros((h, w)),
        };
        let diagnostics = v
            .stages
            .iter()
            .map(|sv| {
                let map = |var: Var| -> Array3<f64> {
                    let a = g.value(var).to_array4().expect("rank-4 diagnostic");
                    a.index_axis_move(Axis(1), 0)
                };
                StageDiagnostics {
                    stage: sv.stage,
                    mean: map(sv.diagnostics.mean),
                    variance: map(sv.diagnostics.variance),
                    gate: map(sv.diagnostics.gate),
                }
            })
            .collect();
        Ok(ModelOutput { restored, log_variance, diagnostics })
    }
}

/// Inverse colour transform as a fixed pointwise layer, clamped.
pub(crate) fn ycbcr_to_rgb_graph(g: &mut Graph, ycc: Var) -> Var {
    let m = YCBCR_TO_RGB;
    let w = Tensor::new(&[3, 3], m.iter().flatten().copied().collect()).expect("3×3");
    let b: Vec<f64> = m.iter().map(|r| -CHROMA_OFFSET * (r[1] + r[2])).collect();
    let w = g.constant(w);
    let b = g.constant(Tensor::new(&[3], b).expect("3"));
    let rgb = g.pointwise(ycc, w, Some(b));
    g.clamp(rgb, 0.0, 1.0)
}

/// Forward colour transform as a fixed pointwise layer.
pub(crate) fn rgb_to_ycbcr_graph(g: &mut Graph, rgb: Var) -> Var {
    let m = crate::media::RGB_TO_YCBCR;
    let w = Tensor::new(&[3, 3], m.iter().flatten().copied().collect()).expect("3×3");
    let w = g.constant(w);
    let b = g.constant(Tensor::new(&[3], vec![0.0, CHROMA_OFFSET, CHROMA_OFFSET]).expect("3"));
    g.pointwise(rgb, w, Some(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::Rng;

    fn clip(t: usize, h: usize, w: usize, seed: u64) -> VideoClip {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        VideoClip::new(Array4::from_shape_simple_fn((t, 3, h, w), || r.random::<f64>()), ColorSpace::Rgb).unwrap()
    }

    #[test]
    fn census_near_target() {
        let m = Model::new(ModelConfig::default(), 0).unwrap();
        let n = m.census();
        assert!(n < 1_000_000, "census {n}");
        assert!((n as f64 - 707_000.0).abs() / 707_000.0 <= 0.30, "census {n}");
    }

    #[test]
    fn shapes_and_diagnostics() {
        let m = Model::new(ModelConfig::tiny(8), 1).unwrap();
        let out = m.forward(&clip(5, 32, 32, 2)).unwrap();
        assert_eq!(out.restored.data.dim(), (3, 32, 32));
        assert!(out.restored.data.iter().all(|v| (0.0..=1.0).contains(v)));
        let stages: Vec<usize> = out.diagnostics.iter().map(|d| d.stage).collect();
        assert_eq!(stages, vec![2, 3]);
        assert_eq!(out.diagnostics[1].gate.dim(), (5, 8, 8));
        assert!(out.log_variance.iter().all(|v| v.abs() <= 8.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = Model::new(ModelConfig::tiny(8), 1).unwrap();
        assert!(matches!(m.forward(&clip(4, 32, 32, 0)), Err(Error::Shape(_))));
        assert!(matches!(m.forward(&clip(5, 30, 32, 0)), Err(Error::Shape(_))));
        assert!(matches!(m.forward(&clip(5, 12, 12, 0)), Err(Error::Config(_))));
    }

    #[test]
    fn variants_configure() {
        let base = ModelConfig::tiny(8);
        for v in Variant::ALL {
            Model::new(v.configure(&base), 0).unwrap();
        }
        let p = Model::new(Variant::AttnVarP.configure(&base), 0).unwrap().census();
        let g = Model::new(Variant::SparseGp.configure(&base), 0).unwrap().census();
        assert_eq!(p, g);
    }

    #[test]
    fn color_graph_matches_media() {
        let c = clip(1, 8, 8, 5);
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_array4(&c.data));
        let y = rgb_to_ycbcr_graph(&mut g, x);
        let back = ycbcr_to_rgb_graph(&mut g, y);
        let ycc = rgb_to_ycbcr(&c).unwrap();
        for (a, b) in g.value(y).data().iter().zip(ycc.data.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in g.value(back).data().iter().zip(c.data.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
