use std::collections::HashMap;

use super::kernels::{self, RbfParams};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Silu,
    Softplus,
    Exp,
    Log,
    Sqrt,
    Square,
    Abs,
    Recip,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    ScaleBy(Var, Var),
    AddChannel(Var, Var),
    MulGate(Var, Var),
    AddFrameChannel(Var, Var),
    Unary(Var, Unary),
    Clamp(Var, f64, f64),
    Pointwise(Var, Var, Option<Var>),
    DwSpatial(Var, Var, Option<Var>),
    DwTemporal(Var, Var, Option<Var>),
    ChannelNorm(Var, Var, Var),
    Unshuffle2(Var),
    Upsample2(Var),
    AvgPool2(Var),
    GlobalMean(Var),
    Mean(Var),
    Linear(Var, Var, Option<Var>),
    Concat(Vec<Var>),
    SliceChannels(Var, usize),
    SliceTime(Var, usize),
    SliceCols(Var, usize),
    Reshape(Var),
    GridPool(Var, usize, bool),
    Rbf {
        q: Var,
        m: Var,
        alpha: Var,
        ell: Var,
        gamma: Var,
        tau_q: Vec<f64>,
        tau_m: Vec<f64>,
    },
    SoftmaxChannels(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode tape. Build a forward pass by calling the op methods,
/// then call [`Graph::backward`] on a scalar output.
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    grads: Vec<Option<Tensor>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Concat(vs) => vs.iter().any(|v| self.nodes[v.0].needs_grad),
            Op::Rbf {
                q,
                m,
                alpha,
                ell,
                gamma,
                ..
            } => [q, m, alpha, ell, gamma].iter().any(|v| self.nodes[v.0].needs_grad),
            op => op_parents(op).iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Input leaf whose gradient is tracked (readable via [`Graph::grad`]).
    pub fn input(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].needs_grad = true;
        v
    }

    /// Leaf bound to a parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.input(store.get(id).clone());
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn binary(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shape mismatch");
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// `scale·x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(x).map(|a| scale * a + shift);
        self.push(v, Op::Affine(x, scale))
    }

    /// `x · s` for a single-element `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Var {
        assert_eq!(self.value(s).len(), 1, "scale_by expects a scalar");
        let k = self.value(s).data()[0];
        let v = self.value(x).map(|a| a * k);
        self.push(v, Op::ScaleBy(x, s))
    }

    /// `x[t,c,:,:] + v[c]`.
    pub fn add_channel(&mut self, x: Var, v: Var) -> Var {
        let (_, c, h, w) = self.value(x).dims4();
        assert_eq!(self.value(v).len(), c, "add_channel width mismatch");
        let p = h * w;
        let mut out = self.value(x).clone();
        let vs = self.value(v).data().to_vec();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o += vs[(i / p) % c];
        }
        self.push(out, Op::AddChannel(x, v))
    }

    /// `x[t,c,i,j] · g[t,0,i,j]`.
    pub fn mul_gate(&mut self, x: Var, g: Var) -> Var {
        let (t, c, h, w) = self.value(x).dims4();
        assert_eq!(self.value(g).shape(), &[t, 1, h, w], "gate shape mismatch");
        let p = h * w;
        let mut out = self.value(x).clone();
        let gs = self.value(g).data().to_vec();
        for f in 0..t {
            for ch in 0..c {
                let off = (f * c + ch) * p;
                for (o, gv) in out.data_mut()[off..off + p].iter_mut().zip(&gs[f * p..(f + 1) * p]) {
                    *o *= gv;
                }
            }
        }
        self.push(out, Op::MulGate(x, g))
    }

    /// `x[t,c,:,:] + y[t,c]`.
    pub fn add_frame_channel(&mut self, x: Var, y: Var) -> Var {
        let (t, c, h, w) = self.value(x).dims4();
        assert_eq!(self.value(y).shape(), &[t, c], "add_frame_channel shape mismatch");
        let p = h * w;
        let mut out = self.value(x).clone();
        let ys = self.value(y).data().to_vec();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o += ys[i / p];
        }
        self.push(out, Op::AddFrameChannel(x, y))
    }

    pub fn unary(&mut self, x: Var, kind: Unary) -> Var {
        let f: fn(f64) -> f64 = match kind {
            Unary::Sigmoid => sigmoid,
            Unary::Silu => |a| a * sigmoid(a),
            Unary::Softplus => softplus,
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
            Unary::Sqrt => f64::sqrt,
            Unary::Square => |a| a * a,
            Unary::Abs => f64::abs,
            Unary::Recip => |a| 1.0 / a,
        };
        let v = self.value(x).map(f);
        self.push(v, Op::Unary(x, kind))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Silu)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Softplus)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Log)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sqrt)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Square)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Abs)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(x).map(|a| a.clamp(lo, hi));
        self.push(v, Op::Clamp(x, lo, hi))
    }

    /// 1×1×1 convolution: `w: [C_out, C_in]`.
    pub fn pointwise(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let v = kernels::pointwise(self.value(x), self.value(w), b.map(|b| self.value(b)));
        self.push(v, Op::Pointwise(x, w, b))
    }

    /// Depthwise 1×k×k convolution: `w: [C, k, k]`.
    pub fn dw_spatial(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let v = kernels::dw_spatial(self.value(x), self.value(w), b.map(|b| self.value(b)));
        self.push(v, Op::DwSpatial(x, w, b))
    }

    /// Depthwise k×1×1 convolution: `w: [C, k]`.
    pub fn dw_temporal(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let v = kernels::dw_temporal(self.value(x), self.value(w), b.map(|b| self.value(b)));
        self.push(v, Op::DwTemporal(x, w, b))
    }

    pub fn channel_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let v = kernels::channel_norm(self.value(x), self.value(gain), self.value(bias));
        self.push(v, Op::ChannelNorm(x, gain, bias))
    }

    pub fn unshuffle2(&mut self, x: Var) -> Var {
        let v = kernels::unshuffle2(self.value(x));
        self.push(v, Op::Unshuffle2(x))
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let v = kernels::upsample2(self.value(x));
        self.push(v, Op::Upsample2(x))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let v = kernels::avg_pool2(self.value(x));
        self.push(v, Op::AvgPool2(x))
    }

    /// Mean over `T, H, W`, giving a `[C]` vector.
    pub fn global_mean(&mut self, x: Var) -> Var {
        let (t, c, h, w) = self.value(x).dims4();
        let p = h * w;
        let mut out = Tensor::zeros(&[c]);
        let xs = self.value(x).data();
        for f in 0..t {
            for ch in 0..c {
                let off = (f * c + ch) * p;
                out.data_mut()[ch] += xs[off..off + p].iter().sum::<f64>();
            }
        }
        let n = (t * p) as f64;
        out.data_mut().iter_mut().for_each(|v| *v /= n);
        self.push(out, Op::GlobalMean(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let m = self.value(x).mean();
        self.push(Tensor::scalar(m), Op::Mean(x))
    }

    /// `x: [N, I]`, `w: [O, I]`, `b: [O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let v = kernels::linear(self.value(x), self.value(w), b.map(|b| self.value(b)));
        self.push(v, Op::Linear(x, w, b))
    }

    /// Concatenate rank-4 volumes along channels.
    pub fn concat(&mut self, xs: &[Var]) -> Var {
        let (t, _, h, w) = self.value(xs[0]).dims4();
        let p = h * w;
        let total: usize = xs.iter().map(|&v| self.value(v).dims4().1).sum();
        let mut out = Tensor::zeros(&[t, total, h, w]);
        let mut c0 = 0;
        for &v in xs {
            let val = self.value(v);
            let (vt, c, vh, vw) = val.dims4();
            assert_eq!((vt, vh, vw), (t, h, w), "concat shape mismatch");
            for f in 0..t {
                let src = &val.data()[f * c * p..(f + 1) * c * p];
                let dst = (f * total + c0) * p;
                out.data_mut()[dst..dst + c * p].copy_from_slice(src);
            }
            c0 += c;
        }
        self.push(out, Op::Concat(xs.to_vec()))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (t, c, h, w) = self.value(x).dims4();
        assert!(start + len <= c, "channel slice out of range");
        let p = h * w;
        let mut out = Tensor::zeros(&[t, len, h, w]);
        for f in 0..t {
            let src = (f * c + start) * p;
            out.data_mut()[f * len * p..(f + 1) * len * p]
                .copy_from_slice(&self.value(x).data()[src..src + len * p]);
        }
        self.push(out, Op::SliceChannels(x, start))
    }

    pub fn slice_time(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (t, c, h, w) = self.value(x).dims4();
        assert!(start + len <= t, "time slice out of range");
        let fsz = c * h * w;
        let data = self.value(x).data()[start * fsz..(start + len) * fsz].to_vec();
        let out = Tensor::new(&[len, c, h, w], data).expect("slice shape");
        self.push(out, Op::SliceTime(x, start))
    }

    /// Columns `start..start+len` of an `[N, K]` matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (n, k) = (self.shape(x)[0], self.shape(x)[1]);
        let mut out = Tensor::zeros(&[n, len]);
        for r in 0..n {
            out.data_mut()[r * len..(r + 1) * len]
                .copy_from_slice(&self.value(x).data()[r * k + start..r * k + start + len]);
        }
        self.push(out, Op::SliceCols(x, start))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let v = self.value(x).clone().reshaped(shape).expect("reshape size");
        self.push(v, Op::Reshape(x))
    }

    pub fn grid_pool(&mut self, x: Var, grid: usize, per_frame: bool) -> Var {
        let v = kernels::grid_pool(self.value(x), grid, per_frame);
        self.push(v, Op::GridPool(x, grid, per_frame))
    }

    /// Spatio-temporal RBF kernel between dense queries `[T, d, H, W]` and
    /// inducing tokens `[M, d]`. `alpha`, `ell` and `gamma` are scalars.
    #[allow(clippy::too_many_arguments)]
    pub fn rbf_kernel(
        &mut self,
        q: Var,
        m: Var,
        alpha: Var,
        ell: Var,
        gamma: Var,
        tau_q: Vec<f64>,
        tau_m: Vec<f64>,
    ) -> Var {
        let prm = RbfParams {
            alpha: self.value(alpha).data()[0],
            ell: self.value(ell).data()[0],
            gamma: self.value(gamma).data()[0],
            tau_q: &tau_q,
            tau_m: &tau_m,
        };
        let v = kernels::rbf_kernel(self.value(q), self.value(m), &prm);
        self.push(
            v,
            Op::Rbf {
                q,
                m,
                alpha,
                ell,
                gamma,
                tau_q,
                tau_m,
            },
        )
    }

    pub fn softmax_channels(&mut self, x: Var) -> Var {
        let v = kernels::softmax_channels(self.value(x));
        self.push(v, Op::SoftmaxChannels(x))
    }

    /// Gradient of `v` after [`Graph::backward`], if `v` received one.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients for every parameter that took part in the forward pass.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = self
            .params
            .iter()
            .map(|(&id, &v)| {
                let g = self
                    .grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()));
                (id, g)
            })
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    /// Back-propagate from a single-element output.
    pub fn backward(&mut self, out: Var) {
        assert_eq!(self.value(out).len(), 1, "backward expects a scalar output");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::full(self.value(out).shape(), 1.0));
        for idx in (0..=out.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            for (parent, g) in self.local_grads(idx, &gy) {
                if !self.nodes[parent.0].needs_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
            grads[idx] = Some(gy);
        }
        self.grads = grads;
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn local_grads(&self, idx: usize, gy: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, gy.clone()), (*b, gy.clone())],
            Op::Sub(a, b) => vec![(*a, gy.clone()), (*b, gy.map(|g| -g))],
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = zip_map(gy, vb, |g, x| g * x);
                let gb = zip_map(gy, va, |g, x| g * x);
                vec![(*a, ga), (*b, gb)]
            }
            Op::Affine(x, s) => vec![(*x, gy.map(|g| g * s))],
            Op::ScaleBy(x, s) => {
                let k = self.value(*s).data()[0];
                let gs: f64 = gy.data().iter().zip(self.value(*x).data()).map(|(g, v)| g * v).sum();
                vec![(*x, gy.map(|g| g * k)), (*s, Tensor::scalar(gs))]
            }
            Op::AddChannel(x, v) => {
                let (_, c, h, w) = gy.dims4();
                let p = h * w;
                let mut gv = Tensor::zeros(&[c]);
                for (i, g) in gy.data().iter().enumerate() {
                    gv.data_mut()[(i / p) % c] += g;
                }
                let gv = gv.reshaped(self.value(*v).shape()).expect("same size");
                vec![(*x, gy.clone()), (*v, gv)]
            }
            Op::MulGate(x, gate) => {
                let (t, c, h, w) = gy.dims4();
                let p = h * w;
                let xs = self.value(*x).data();
                let gs = self.value(*gate).data();
                let mut gx = gy.clone();
                let mut gg = Tensor::zeros(&[t, 1, h, w]);
                for f in 0..t {
                    for ch in 0..c {
                        let off = (f * c + ch) * p;
                        for i in 0..p {
                            gx.data_mut()[off + i] *= gs[f * p + i];
                            gg.data_mut()[f * p + i] += gy.data()[off + i] * xs[off + i];
                        }
                    }
                }
                vec![(*x, gx), (*gate, gg)]
            }
            Op::AddFrameChannel(x, yv) => {
                let (t, c, h, w) = gy.dims4();
                let p = h * w;
                let mut g2 = Tensor::zeros(&[t, c]);
                for (i, g) in gy.data().iter().enumerate() {
                    g2.data_mut()[i / p] += g;
                }
                vec![(*x, gy.clone()), (*yv, g2)]
            }
            Op::Unary(x, kind) => {
                let xv = self.value(*x);
                let d: Box<dyn Fn(f64, f64) -> f64> = match kind {
                    Unary::Sigmoid => Box::new(|_, y| y * (1.0 - y)),
                    Unary::Silu => Box::new(|x, _| {
                        let s = sigmoid(x);
                        s * (1.0 + x * (1.0 - s))
                    }),
                    Unary::Softplus => Box::new(|x, _| sigmoid(x)),
                    Unary::Exp => Box::new(|_, y| y),
                    Unary::Log => Box::new(|x, _| 1.0 / x),
                    Unary::Sqrt => Box::new(|_, y| 0.5 / y),
                    Unary::Square => Box::new(|x, _| 2.0 * x),
                    Unary::Abs => Box::new(|x, _| {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }),
                    Unary::Recip => Box::new(|_, y| -y * y),
                };
                let data = gy
                    .data()
                    .iter()
                    .zip(xv.data().iter().zip(y.data()))
                    .map(|(g, (&xx, &yy))| g * d(xx, yy))
                    .collect();
                vec![(*x, Tensor::new(gy.shape(), data).expect("shape"))]
            }
            Op::Clamp(x, lo, hi) => {
                let g = zip_map(gy, self.value(*x), |g, v| if v > *lo && v < *hi { g } else { 0.0 });
                vec![(*x, g)]
            }
            Op::Pointwise(x, w, b) => {
                let (gx, gw, gb) = kernels::pointwise_backward(self.value(*x), self.value(*w), gy, self.wants(*x));
                let mut out = vec![(*w, gw)];
                if let Some(gx) = gx {
                    out.push((*x, gx));
                }
                if let Some(b) = b {
                    out.push((*b, gb));
                }
                out
            }
            Op::DwSpatial(x, w, b) => {
                let (gx, gw, gb) = kernels::dw_spatial_backward(self.value(*x), self.value(*w), gy, self.wants(*x));
                let mut out = vec![(*w, gw)];
                if let Some(gx) = gx {
                    out.push((*x, gx));
                }
                if let Some(b) = b {
                    out.push((*b, gb));
                }
                out
            }
            Op::DwTemporal(x, w, b) => {
                let (gx, gw, gb) = kernels::dw_temporal_backward(self.value(*x), self.value(*w), gy, self.wants(*x));
                let mut out = vec![(*w, gw)];
                if let Some(gx) = gx {
                    out.push((*x, gx));
                }
                if let Some(b) = b {
                    out.push((*b, gb));
                }
                out
            }
            Op::ChannelNorm(x, gain, bias) => {
                let (gx, gg, gb) = kernels::channel_norm_backward(self.value(*x), self.value(*gain), gy);
                vec![(*x, gx), (*gain, gg), (*bias, gb)]
            }
            Op::Unshuffle2(x) => vec![(*x, kernels::unshuffle2_backward(self.shape(*x), gy))],
            Op::Upsample2(x) => vec![(*x, kernels::upsample2_backward(self.shape(*x), gy))],
            Op::AvgPool2(x) => vec![(*x, kernels::avg_pool2_backward(self.shape(*x), gy))],
            Op::GlobalMean(x) => {
                let (t, c, h, w) = self.value(*x).dims4();
                let p = h * w;
                let n = (t * p) as f64;
                let mut gx = Tensor::zeros(&[t, c, h, w]);
                for (i, v) in gx.data_mut().iter_mut().enumerate() {
                    *v = gy.data()[(i / p) % c] / n;
                }
                vec![(*x, gx)]
            }
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                let g = gy.data()[0] / n;
                vec![(*x, Tensor::full(self.shape(*x), g))]
            }
            Op::Linear(x, w, b) => {
                let (gx, gw, gb) = kernels::linear_backward(self.value(*x), self.value(*w), gy);
                let mut out = vec![(*x, gx), (*w, gw)];
                if let Some(b) = b {
                    out.push((*b, gb));
                }
                out
            }
            Op::Concat(xs) => {
                let (t, total, h, w) = gy.dims4();
                let p = h * w;
                let mut c0 = 0;
                let mut out = Vec::with_capacity(xs.len());
                for &v in xs {
                    let c = self.value(v).dims4().1;
                    let mut g = Tensor::zeros(&[t, c, h, w]);
                    for f in 0..t {
                        let src = (f * total + c0) * p;
                        g.data_mut()[f * c * p..(f + 1) * c * p].copy_from_slice(&gy.data()[src..src + c * p]);
                    }
                    c0 += c;
                    out.push((v, g));
                }
                out
            }
            Op::SliceChannels(x, start) => {
                let (t, c, h, w) = self.value(*x).dims4();
                let len = gy.dims4().1;
                let p = h * w;
                let mut g = Tensor::zeros(&[t, c, h, w]);
                for f in 0..t {
                    let dst = (f * c + start) * p;
                    g.data_mut()[dst..dst + len * p].copy_from_slice(&gy.data()[f * len * p..(f + 1) * len * p]);
                }
                vec![(*x, g)]
            }
            Op::SliceTime(x, start) => {
                let mut g = Tensor::zeros(self.shape(*x));
                let n = gy.len();
                let off = start * n / gy.shape()[0];
                g.data_mut()[off..off + n].copy_from_slice(gy.data());
                vec![(*x, g)]
            }
            Op::SliceCols(x, start) => {
                let (n, k) = (self.shape(*x)[0], self.shape(*x)[1]);
                let len = gy.shape()[1];
                let mut g = Tensor::zeros(&[n, k]);
                for r in 0..n {
                    g.data_mut()[r * k + start..r * k + start + len].copy_from_slice(&gy.data()[r * len..(r + 1) * len]);
                }
                vec![(*x, g)]
            }
            Op::Reshape(x) => vec![(*x, gy.clone().reshaped(self.shape(*x)).expect("size"))],
            Op::GridPool(x, grid, per_frame) => {
                vec![(*x, kernels::grid_pool_backward(self.shape(*x), *grid, *per_frame, gy))]
            }
            Op::Rbf {
                q,
                m,
                alpha,
                ell,
                gamma,
                tau_q,
                tau_m,
            } => {
                let prm = RbfParams {
                    alpha: self.value(*alpha).data()[0],
                    ell: self.value(*ell).data()[0],
                    gamma: self.value(*gamma).data()[0],
                    tau_q,
                    tau_m,
                };
                let g = kernels::rbf_kernel_backward(self.value(*q), self.value(*m), &prm, y, gy);
                vec![
                    (*q, g.q),
                    (*m, g.m),
                    (*alpha, Tensor::scalar(g.alpha)),
                    (*ell, Tensor::scalar(g.ell)),
                    (*gamma, Tensor::scalar(g.gamma)),
                ]
            }
            Op::SoftmaxChannels(x) => vec![(*x, kernels::softmax_channels_backward(y, gy))],
        }
    }
}

fn op_parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
        Op::ScaleBy(a, b) | Op::AddChannel(a, b) | Op::MulGate(a, b) | Op::AddFrameChannel(a, b) => {
            vec![*a, *b]
        }
        Op::Affine(x, _) | Op::Unary(x, _) | Op::Clamp(x, _, _) => vec![*x],
        Op::Pointwise(x, w, b) | Op::DwSpatial(x, w, b) | Op::DwTemporal(x, w, b) | Op::Linear(x, w, b) => {
            let mut v = vec![*x, *w];
            v.extend(b.iter().copied());
            v
        }
        Op::ChannelNorm(x, g, b) => vec![*x, *g, *b],
        Op::Unshuffle2(x)
        | Op::Upsample2(x)
        | Op::AvgPool2(x)
        | Op::GlobalMean(x)
        | Op::Mean(x)
        | Op::SliceChannels(x, _)
        | Op::SliceTime(x, _)
        | Op::SliceCols(x, _)
        | Op::Reshape(x)
        | Op::GridPool(x, _, _)
        | Op::SoftmaxChannels(x) => vec![*x],
        Op::Concat(xs) => xs.clone(),
        Op::Rbf {
            q,
            m,
            alpha,
            ell,
            gamma,
            ..
        } => vec![*q, *m, *alpha, *ell, *gamma],
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("shape")
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
