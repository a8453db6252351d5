use crate::autograd::{Graph, Init, ParamStore, Var};
use crate::layers::{Depthwise, Lin, Norm, Pw};

/// Factorized stem convolution: pointwise, depthwise spatial, depthwise
/// temporal, SiLU.
#[derive(Clone, Copy, Debug)]
pub struct P3dConv {
    pw: Pw,
    dws: Depthwise,
    dwt: Depthwise,
}

impl P3dConv {
    pub fn new(init: &mut Init<'_>, cin: usize, cout: usize) -> Self {
        Self {
            pw: Pw::new(init, "pw", cout, cin, true),
            dws: Depthwise::new(init, "dws", cout, true),
            dwt: Depthwise::new(init, "dwt", cout, false),
        }
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let x = self.pw.apply(g, store, x);
        let x = self.dws.apply(g, store, x);
        let x = self.dwt.apply(g, store, x);
        g.silu(x)
    }
}

/// Residual pseudo-3D block: a normalized spatial pair expanding the width,
/// then a normalized temporal pair projecting back.
#[derive(Clone, Copy, Debug)]
pub struct Pseudo3dBlock {
    norm1: Norm,
    dws: Depthwise,
    pw1: Pw,
    norm2: Norm,
    dwt: Depthwise,
    pw2: Pw,
}

impl Pseudo3dBlock {
    pub fn new(init: &mut Init<'_>, c: usize, expansion: usize) -> Self {
        let e = c * expansion;
        Self {
            norm1: Norm::new(init, "norm1", c),
            dws: Depthwise::new(init, "dws", c, true),
            pw1: Pw::new(init, "pw1", e, c, true),
            norm2: Norm::new(init, "norm2", e),
            dwt: Depthwise::new(init, "dwt", e, false),
            pw2: Pw::new(init, "pw2", c, e, true),
        }
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, f: Var) -> Var {
        let h = self.norm1.apply(g, store, f);
        let h = self.dws.apply(g, store, h);
        let h = self.pw1.apply(g, store, h);
        let h = g.silu(h);
        let h = self.norm2.apply(g, store, h);
        let h = self.dwt.apply(g, store, h);
        let h = self.pw2.apply(g, store, h);
        g.add(f, h)
    }
}

/// Stride-2 2×2 convolution realised as space-to-depth plus pointwise.
#[derive(Clone, Copy, Debug)]
pub struct Downsample {
    pw: Pw,
}

impl Downsample {
    pub fn new(init: &mut Init<'_>, cin: usize, cout: usize) -> Self {
        Self { pw: Pw::new(init, "pw", cout, 4 * cin, true) }
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let x = g.unshuffle2(x);
        self.pw.apply(g, store, x)
    }
}

/// Bilinear ×2 upsampling followed by pointwise projection.
#[derive(Clone, Copy, Debug)]
pub struct Upsample {
    pw: Pw,
}

impl Upsample {
    pub fn new(init: &mut Init<'_>, cin: usize, cout: usize) -> Self {
        Self { pw: Pw::new(init, "pw", cout, cin, true) }
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let x = g.upsample2(x);
        self.pw.apply(g, store, x)
    }
}

/// Two-convolution prediction head: pointwise, depthwise spatial, SiLU,
/// pointwise.
#[derive(Clone, Copy, Debug)]
pub struct Head {
    pw1: Pw,
    dws: Depthwise,
    pw2: Pw,
}

impl Head {
    pub fn new(init: &mut Init<'_>, cin: usize, hidden: usize, cout: usize) -> Self {
        Self {
            pw1: Pw::new(init, "pw1", hidden, cin, true),
            dws: Depthwise::new(init, "dws", hidden, true),
            pw2: Pw::new(init, "pw2", cout, hidden, true),
        }
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Var {
        let x = self.pw1.apply(g, store, z);
        let x = self.dws.apply(g, store, x);
        let x = g.silu(x);
        self.pw2.apply(g, store, x)
    }
}

/// Clip-level context: two strided stages, global mean, two-layer MLP.
#[derive(Clone, Copy, Debug)]
pub struct GlobalBranch {
    conv1: Pw,
    conv2: Pw,
    fc1: Lin,
    fc2: Lin,
}

/// Widths of the two strided stages of the global branch.
pub const GLOBAL_WIDTHS: (usize, usize) = (16, 32);

impl GlobalBranch {
    pub fn new(init: &mut Init<'_>, cin: usize, out: usize) -> Self {
        let (w1, w2) = GLOBAL_WIDTHS;
        Self {
            conv1: Pw::new(init, "conv1", w1, 4 * cin, true),
            conv2: Pw::new(init, "conv2", w2, 4 * w1, true),
            fc1: Lin::new(init, "fc1", out, w2),
            fc2: Lin::new(init, "fc2", out, out),
        }
    }

    /// Returns a `[1, C_g]` row.
    pub fn apply(&self, g: &mut Graph, store: &ParamStore, clip: Var) -> Var {
        let x = g.unshuffle2(clip);
        let x = self.conv1.apply(g, store, x);
        let x = g.silu(x);
        let x = g.unshuffle2(x);
        let x = self.conv2.apply(g, store, x);
        let x = g.silu(x);
        let v = g.global_mean(x);
        let n = g.shape(v)[0];
        let v = g.reshape(v, &[1, n]);
        let h = self.fc1.apply(g, store, v);
        let h = g.silu(h);
        self.fc2.apply(g, store, h)
    }
}
