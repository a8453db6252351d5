//! Parameterized building blocks shared by the network modules.

use crate::autograd::{Graph, Init, ParamId, ParamStore, Var};

/// 1×1×1 convolution `[Cout, Cin]` with optional bias.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Pw {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Pw {
    pub fn new(init: &mut Init<'_>, name: &str, cout: usize, cin: usize, bias: bool) -> Self {
        let bound = 1.0 / (cin as f64).sqrt();
        let w = init.uniform(&format!("{name}.weight"), &[cout, cin], bound);
        let b = bias.then(|| init.constant(&format!("{name}.bias"), &[cout], 0.0));
        Self { w, b }
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = self.b.map(|b| g.param(store, b));
        g.pointwise(x, w, b)
    }
}

/// Dense layer on `[N, Cin]` rows.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Lin {
    pub w: ParamId,
    pub b: ParamId,
}

impl Lin {
    pub fn new(init: &mut Init<'_>, name: &str, cout: usize, cin: usize) -> Self {
        let bound = 1.0 / (cin as f64).sqrt();
        Self {
            w: init.uniform(&format!("{name}.weight"), &[cout, cin], bound),
            b: init.constant(&format!("{name}.bias"), &[cout], 0.0),
        }
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.linear(x, w, Some(b))
    }
}

/// Depthwise 1×3×3 (spatial) or 3×1×1 (temporal) convolution with bias.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Depthwise {
    pub w: ParamId,
    pub b: ParamId,
    pub spatial: bool,
}

impl Depthwise {
    /// A centred delta plus small Gaussian jitter.
    pub fn new(init: &mut Init<'_>, name: &str, c: usize, spatial: bool) -> Self {
        let shape: Vec<usize> = if spatial { vec![c, 3, 3] } else { vec![c, 3] };
        let w = init.normal(&format!("{name}.weight"), &shape, 0.1);
        let taps = if spatial { 9 } else { 3 };
        let store_w = init.get_mut(w);
        for ch in 0..c {
            store_w.data_mut()[ch * taps + taps / 2] += 1.0;
        }
        let b = init.constant(&format!("{name}.bias"), &[c], 0.0);
        Self { w, b, spatial }
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        if self.spatial {
            g.dw_spatial(x, w, Some(b))
        } else {
            g.dw_temporal(x, w, Some(b))
        }
    }
}

/// Per-location channel normalization with gain and bias.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    pub fn new(init: &mut Init<'_>, name: &str, c: usize) -> Self {
        Self {
            gain: init.constant(&format!("{name}.gain"), &[c], 1.0),
            bias: init.constant(&format!("{name}.bias"), &[c], 0.0),
        }
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.channel_norm(x, gain, bias)
    }
}
