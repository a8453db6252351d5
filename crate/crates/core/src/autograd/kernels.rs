//! Forward and adjoint kernels for the layer primitives.
//!
//! Every spatial operator uses replicate (edge-clamped) padding so that
//! output shapes always equal input shapes.

use super::tensor::Tensor;

/// `C = A·B` (+ `C` when `accumulate`) for row-major strided operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: callers pass slices whose extents cover every (row, col)
    // addressed by the given dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn pointwise(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let (t, ci, h, wd) = x.dims4();
    let co = w.shape()[0];
    debug_assert_eq!(w.shape()[1], ci);
    let p = h * wd;
    let mut out = Tensor::zeros(&[t, co, h, wd]);
    let xs = x.data();
    let ws = w.data();
    let os = out.data_mut();
    for f in 0..t {
        let xf = &xs[f * ci * p..(f + 1) * ci * p];
        let of = &mut os[f * co * p..(f + 1) * co * p];
        gemm(co, ci, p, ws, ci as isize, 1, xf, p as isize, 1, of, false);
        if let Some(b) = b {
            for (o, &bo) in b.data().iter().enumerate() {
                for v in &mut of[o * p..(o + 1) * p] {
                    *v += bo;
                }
            }
        }
    }
    out
}

pub(crate) fn pointwise_backward(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
    want_x: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let (t, ci, h, wd) = x.dims4();
    let co = w.shape()[0];
    let p = h * wd;
    let mut gx = want_x.then(|| Tensor::zeros(x.shape()));
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros(&[co]);
    let xs = x.data();
    let gys = gy.data();
    for f in 0..t {
        let xf = &xs[f * ci * p..(f + 1) * ci * p];
        let gf = &gys[f * co * p..(f + 1) * co * p];
        if let Some(gx) = gx.as_mut() {
            let gxf = &mut gx.data_mut()[f * ci * p..(f + 1) * ci * p];
            // Wᵀ (ci×co) · gy (co×p)
            gemm(ci, co, p, w.data(), 1, ci as isize, gf, p as isize, 1, gxf, false);
        }
        // gy (co×p) · xᵀ (p×ci)
        gemm(co, p, ci, gf, p as isize, 1, xf, 1, p as isize, gw.data_mut(), true);
        for o in 0..co {
            gb.data_mut()[o] += gf[o * p..(o + 1) * p].iter().sum::<f64>();
        }
    }
    (gx, gw, gb)
}

/// `y = x Wᵀ + b` for `x: [N, I]`, `W: [O, I]`.
pub(crate) fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let (n, i) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[0];
    let mut out = Tensor::zeros(&[n, o]);
    gemm(n, i, o, x.data(), i as isize, 1, w.data(), 1, i as isize, out.data_mut(), false);
    if let Some(b) = b {
        for row in out.data_mut().chunks_mut(o) {
            for (v, bo) in row.iter_mut().zip(b.data()) {
                *v += bo;
            }
        }
    }
    out
}

pub(crate) fn linear_backward(x: &Tensor, w: &Tensor, gy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (n, i) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[0];
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros(&[o]);
    // gx = gy (n×o) · W (o×i)
    gemm(n, o, i, gy.data(), o as isize, 1, w.data(), i as isize, 1, gx.data_mut(), false);
    // gW = gyᵀ (o×n) · x (n×i)
    gemm(o, n, i, gy.data(), 1, o as isize, x.data(), i as isize, 1, gw.data_mut(), false);
    for row in gy.data().chunks(o) {
        for (g, v) in gb.data_mut().iter_mut().zip(row) {
            *g += v;
        }
    }
    (gx, gw, gb)
}

fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Depthwise `k×k` spatial convolution, weights `[C, k, k]`.
pub(crate) fn dw_spatial(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let (t, c, h, wd) = x.dims4();
    let k = w.shape()[1];
    let r = (k / 2) as isize;
    let p = h * wd;
    let mut out = Tensor::zeros(x.shape());
    let cols: Vec<Vec<usize>> = (0..k)
        .map(|dj| (0..wd).map(|j| clamp_index(j as isize + dj as isize - r, wd)).collect())
        .collect();
    let xs = x.data();
    let os = out.data_mut();
    for f in 0..t {
        for ch in 0..c {
            let off = (f * c + ch) * p;
            let xp = &xs[off..off + p];
            let op = &mut os[off..off + p];
            let bias = b.map_or(0.0, |b| b.data()[ch]);
            op.iter_mut().for_each(|v| *v = bias);
            for di in 0..k {
                for i in 0..h {
                    let si = clamp_index(i as isize + di as isize - r, h);
                    let src = &xp[si * wd..(si + 1) * wd];
                    let dst = &mut op[i * wd..(i + 1) * wd];
                    for (dj, col) in cols.iter().enumerate() {
                        let wv = w.data()[(ch * k + di) * k + dj];
                        for (d, &cj) in dst.iter_mut().zip(col) {
                            *d += wv * src[cj];
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn dw_spatial_backward(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
    want_x: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let (t, c, h, wd) = x.dims4();
    let k = w.shape()[1];
    let r = (k / 2) as isize;
    let p = h * wd;
    let mut gx = want_x.then(|| Tensor::zeros(x.shape()));
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros(&[c]);
    let cols: Vec<Vec<usize>> = (0..k)
        .map(|dj| (0..wd).map(|j| clamp_index(j as isize + dj as isize - r, wd)).collect())
        .collect();
    let xs = x.data();
    let gys = gy.data();
    for f in 0..t {
        for ch in 0..c {
            let off = (f * c + ch) * p;
            let xp = &xs[off..off + p];
            let gp = &gys[off..off + p];
            gb.data_mut()[ch] += gp.iter().sum::<f64>();
            for di in 0..k {
                for i in 0..h {
                    let si = clamp_index(i as isize + di as isize - r, h);
                    let src = &xp[si * wd..(si + 1) * wd];
                    let g = &gp[i * wd..(i + 1) * wd];
                    for (dj, col) in cols.iter().enumerate() {
                        let widx = (ch * k + di) * k + dj;
                        let mut acc = 0.0;
                        for (gv, &cj) in g.iter().zip(col) {
                            acc += gv * src[cj];
                        }
                        gw.data_mut()[widx] += acc;
                        if let Some(gx) = gx.as_mut() {
                            let wv = w.data()[widx];
                            let gxp = &mut gx.data_mut()[off + si * wd..off + (si + 1) * wd];
                            for (gv, &cj) in g.iter().zip(col) {
                                gxp[cj] += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

/// Depthwise temporal convolution, weights `[C, k]`.
pub(crate) fn dw_temporal(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let (t, c, h, wd) = x.dims4();
    let k = w.shape()[1];
    let r = (k / 2) as isize;
    let p = h * wd;
    let mut out = Tensor::zeros(x.shape());
    let xs = x.data();
    let os = out.data_mut();
    for f in 0..t {
        for ch in 0..c {
            let off = (f * c + ch) * p;
            let bias = b.map_or(0.0, |b| b.data()[ch]);
            os[off..off + p].iter_mut().for_each(|v| *v = bias);
            for dk in 0..k {
                let sf = clamp_index(f as isize + dk as isize - r, t);
                let wv = w.data()[ch * k + dk];
                let soff = (sf * c + ch) * p;
                for (o, s) in os[off..off + p].iter_mut().zip(&xs[soff..soff + p]) {
                    *o += wv * s;
                }
            }
        }
    }
    out
}

pub(crate) fn dw_temporal_backward(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
    want_x: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let (t, c, h, wd) = x.dims4();
    let k = w.shape()[1];
    let r = (k / 2) as isize;
    let p = h * wd;
    let mut gx = want_x.then(|| Tensor::zeros(x.shape()));
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros(&[c]);
    let xs = x.data();
    let gys = gy.data();
    for f in 0..t {
        for ch in 0..c {
            let off = (f * c + ch) * p;
            let g = &gys[off..off + p];
            gb.data_mut()[ch] += g.iter().sum::<f64>();
            for dk in 0..k {
                let sf = clamp_index(f as isize + dk as isize - r, t);
                let soff = (sf * c + ch) * p;
                let widx = ch * k + dk;
                gw.data_mut()[widx] += g.iter().zip(&xs[soff..soff + p]).map(|(a, b)| a * b).sum::<f64>();
                if let Some(gx) = gx.as_mut() {
                    let wv = w.data()[widx];
                    for (d, gv) in gx.data_mut()[soff..soff + p].iter_mut().zip(g) {
                        *d += wv * gv;
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

pub(crate) const NORM_EPS: f64 = 1e-5;

/// Per-location normalization across channels with affine `gain`/`bias`.
pub(crate) fn channel_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Tensor {
    let (t, c, h, wd) = x.dims4();
    let p = h * wd;
    let mut out = Tensor::zeros(x.shape());
    let xs = x.data();
    let os = out.data_mut();
    for f in 0..t {
        let base = f * c * p;
        for i in 0..p {
            let mut mean = 0.0;
            for ch in 0..c {
                mean += xs[base + ch * p + i];
            }
            mean /= c as f64;
            let mut var = 0.0;
            for ch in 0..c {
                let d = xs[base + ch * p + i] - mean;
                var += d * d;
            }
            var /= c as f64;
            let rstd = 1.0 / (var + NORM_EPS).sqrt();
            for ch in 0..c {
                let idx = base + ch * p + i;
                os[idx] = (xs[idx] - mean) * rstd * gain.data()[ch] + bias.data()[ch];
            }
        }
    }
    out
}

pub(crate) fn channel_norm_backward(
    x: &Tensor,
    gain: &Tensor,
    gy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (t, c, h, wd) = x.dims4();
    let p = h * wd;
    let mut gx = Tensor::zeros(x.shape());
    let mut gg = Tensor::zeros(&[c]);
    let mut gb = Tensor::zeros(&[c]);
    let xs = x.data();
    let gys = gy.data();
    let mut xhat = vec![0.0; c];
    let mut dxhat = vec![0.0; c];
    for f in 0..t {
        let base = f * c * p;
        for i in 0..p {
            let mut mean = 0.0;
            for ch in 0..c {
                mean += xs[base + ch * p + i];
            }
            mean /= c as f64;
            let mut var = 0.0;
            for ch in 0..c {
                let d = xs[base + ch * p + i] - mean;
                var += d * d;
            }
            var /= c as f64;
            let rstd = 1.0 / (var + NORM_EPS).sqrt();
            let mut m1 = 0.0;
            let mut m2 = 0.0;
            for ch in 0..c {
                let idx = base + ch * p + i;
                xhat[ch] = (xs[idx] - mean) * rstd;
                dxhat[ch] = gys[idx] * gain.data()[ch];
                gg.data_mut()[ch] += gys[idx] * xhat[ch];
                gb.data_mut()[ch] += gys[idx];
                m1 += dxhat[ch];
                m2 += dxhat[ch] * xhat[ch];
            }
            m1 /= c as f64;
            m2 /= c as f64;
            for ch in 0..c {
                gx.data_mut()[base + ch * p + i] = rstd * (dxhat[ch] - m1 - xhat[ch] * m2);
            }
        }
    }
    (gx, gg, gb)
}

/// Space-to-depth by a factor of two: `[T,C,H,W] -> [T,4C,H/2,W/2]`.
pub(crate) fn unshuffle2(x: &Tensor) -> Tensor {
    let (t, c, h, w) = x.dims4();
    let (h2, w2) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[t, 4 * c, h2, w2]);
    let xs = x.data();
    let os = out.data_mut();
    for f in 0..t {
        for ch in 0..c {
            for a in 0..2 {
                for b in 0..2 {
                    let oc = ch * 4 + a * 2 + b;
                    let ob = (f * 4 * c + oc) * h2 * w2;
                    let ib = (f * c + ch) * h * w;
                    for i in 0..h2 {
                        for j in 0..w2 {
                            os[ob + i * w2 + j] = xs[ib + (2 * i + a) * w + 2 * j + b];
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn unshuffle2_backward(x_shape: &[usize], gy: &Tensor) -> Tensor {
    let (t, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (h2, w2) = (h / 2, w / 2);
    let mut gx = Tensor::zeros(x_shape);
    let gs = gy.data();
    let xs = gx.data_mut();
    for f in 0..t {
        for ch in 0..c {
            for a in 0..2 {
                for b in 0..2 {
                    let oc = ch * 4 + a * 2 + b;
                    let ob = (f * 4 * c + oc) * h2 * w2;
                    let ib = (f * c + ch) * h * w;
                    for i in 0..h2 {
                        for j in 0..w2 {
                            xs[ib + (2 * i + a) * w + 2 * j + b] = gs[ob + i * w2 + j];
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Source taps `(i0, i1, frac)` for ×2 bilinear upsampling with half-pixel centers.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub(crate) fn upsample2(x: &Tensor) -> Tensor {
    let (t, c, h, w) = x.dims4();
    let (ho, wo) = (2 * h, 2 * w);
    let rows = upsample_taps(h);
    let cols = upsample_taps(w);
    let mut out = Tensor::zeros(&[t, c, ho, wo]);
    let xs = x.data();
    let os = out.data_mut();
    for plane in 0..t * c {
        let ib = plane * h * w;
        let ob = plane * ho * wo;
        for (oi, &(r0, r1, fr)) in rows.iter().enumerate() {
            for (oj, &(c0, c1, fc)) in cols.iter().enumerate() {
                let v00 = xs[ib + r0 * w + c0];
                let v01 = xs[ib + r0 * w + c1];
                let v10 = xs[ib + r1 * w + c0];
                let v11 = xs[ib + r1 * w + c1];
                os[ob + oi * wo + oj] = (1.0 - fr) * ((1.0 - fc) * v00 + fc * v01)
                    + fr * ((1.0 - fc) * v10 + fc * v11);
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward(x_shape: &[usize], gy: &Tensor) -> Tensor {
    let (t, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (ho, wo) = (2 * h, 2 * w);
    let rows = upsample_taps(h);
    let cols = upsample_taps(w);
    let mut gx = Tensor::zeros(x_shape);
    let gs = gy.data();
    let xs = gx.data_mut();
    for plane in 0..t * c {
        let ib = plane * h * w;
        let ob = plane * ho * wo;
        for (oi, &(r0, r1, fr)) in rows.iter().enumerate() {
            for (oj, &(c0, c1, fc)) in cols.iter().enumerate() {
                let g = gs[ob + oi * wo + oj];
                xs[ib + r0 * w + c0] += (1.0 - fr) * (1.0 - fc) * g;
                xs[ib + r0 * w + c1] += (1.0 - fr) * fc * g;
                xs[ib + r1 * w + c0] += fr * (1.0 - fc) * g;
                xs[ib + r1 * w + c1] += fr * fc * g;
            }
        }
    }
    gx
}

/// 2×2 average pooling (identical to half-resolution bilinear resampling
/// with half-pixel centers).
pub(crate) fn avg_pool2(x: &Tensor) -> Tensor {
    let (t, c, h, w) = x.dims4();
    let (h2, w2) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[t, c, h2, w2]);
    let xs = x.data();
    let os = out.data_mut();
    for plane in 0..t * c {
        let ib = plane * h * w;
        let ob = plane * h2 * w2;
        for i in 0..h2 {
            for j in 0..w2 {
                let a = ib + 2 * i * w + 2 * j;
                os[ob + i * w2 + j] = 0.25 * (xs[a] + xs[a + 1] + xs[a + w] + xs[a + w + 1]);
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward(x_shape: &[usize], gy: &Tensor) -> Tensor {
    let (t, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (h2, w2) = (h / 2, w / 2);
    let mut gx = Tensor::zeros(x_shape);
    let gs = gy.data();
    let xs = gx.data_mut();
    for plane in 0..t * c {
        let ib = plane * h * w;
        let ob = plane * h2 * w2;
        for i in 0..h2 {
            for j in 0..w2 {
                let g = 0.25 * gs[ob + i * w2 + j];
                let a = ib + 2 * i * w + 2 * j;
                xs[a] += g;
                xs[a + 1] += g;
                xs[a + w] += g;
                xs[a + w + 1] += g;
            }
        }
    }
    gx
}

/// Adaptive bin edges `[floor(i·n/g), ceil((i+1)·n/g))`.
pub(crate) fn grid_bins(n: usize, g: usize) -> Vec<(usize, usize)> {
    (0..g)
        .map(|i| ((i * n) / g, ((i + 1) * n).div_ceil(g)))
        .collect()
}

/// Average-pool each frame onto a `grid×grid` lattice. Returns `[M, C]`
/// tokens; with `per_frame = false` the cells are also averaged across
/// frames (`M = grid²`), otherwise `M = T·grid²`.
pub(crate) fn grid_pool(x: &Tensor, grid: usize, per_frame: bool) -> Tensor {
    let (t, c, h, w) = x.dims4();
    let rows = grid_bins(h, grid);
    let cols = grid_bins(w, grid);
    let cells = grid * grid;
    let m = if per_frame { t * cells } else { cells };
    let mut out = Tensor::zeros(&[m, c]);
    let frame_w = if per_frame { 1.0 } else { 1.0 / t as f64 };
    for f in 0..t {
        for ch in 0..c {
            let pl = x.plane(f, ch);
            for (gi, &(r0, r1)) in rows.iter().enumerate() {
                for (gj, &(c0, c1)) in cols.iter().enumerate() {
                    let mut acc = 0.0;
                    for i in r0..r1 {
                        acc += pl[i * w + c0..i * w + c1].iter().sum::<f64>();
                    }
                    let count = ((r1 - r0) * (c1 - c0)) as f64;
                    let tok = if per_frame { f * cells } else { 0 } + gi * grid + gj;
                    out.data_mut()[tok * c + ch] += frame_w * acc / count;
                }
            }
        }
    }
    out
}

pub(crate) fn grid_pool_backward(x_shape: &[usize], grid: usize, per_frame: bool, gy: &Tensor) -> Tensor {
    let (t, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let rows = grid_bins(h, grid);
    let cols = grid_bins(w, grid);
    let cells = grid * grid;
    let frame_w = if per_frame { 1.0 } else { 1.0 / t as f64 };
    let mut gx = Tensor::zeros(x_shape);
    for f in 0..t {
        for ch in 0..c {
            let off = (f * c + ch) * h * w;
            for (gi, &(r0, r1)) in rows.iter().enumerate() {
                for (gj, &(c0, c1)) in cols.iter().enumerate() {
                    let count = ((r1 - r0) * (c1 - c0)) as f64;
                    let tok = if per_frame { f * cells } else { 0 } + gi * grid + gj;
                    let g = frame_w * gy.data()[tok * c + ch] / count;
                    for i in r0..r1 {
                        for v in &mut gx.data_mut()[off + i * w + c0..off + i * w + c1] {
                            *v += g;
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Squared query/inducing distances `[T, M, H, W]`.
fn sq_distances(q: &Tensor, m: &Tensor) -> Tensor {
    let (t, d, h, w) = q.dims4();
    let mm = m.shape()[0];
    let p = h * w;
    let mut out = Tensor::zeros(&[t, mm, h, w]);
    for f in 0..t {
        for j in 0..mm {
            let ob = (f * mm + j) * p;
            for c in 0..d {
                let mv = m.data()[j * d + c];
                let qp = q.plane(f, c);
                for (o, &qv) in out.data_mut()[ob..ob + p].iter_mut().zip(qp) {
                    let diff = qv - mv;
                    *o += diff * diff;
                }
            }
        }
    }
    out
}

pub(crate) struct RbfParams<'a> {
    pub alpha: f64,
    pub ell: f64,
    pub gamma: f64,
    pub tau_q: &'a [f64],
    pub tau_m: &'a [f64],
}

/// `K = α·exp(−‖q−m‖²/(2ℓ²) − (τ_q−τ_m)²/(2γ²))`, output `[T, M, H, W]`.
pub(crate) fn rbf_kernel(q: &Tensor, m: &Tensor, prm: &RbfParams) -> Tensor {
    let (t, _, h, w) = q.dims4();
    let mm = m.shape()[0];
    let p = h * w;
    let mut k = sq_distances(q, m);
    let inv_l = 1.0 / (2.0 * prm.ell * prm.ell);
    let inv_g = 1.0 / (2.0 * prm.gamma * prm.gamma);
    for f in 0..t {
        for j in 0..mm {
            let dt = prm.tau_q[f] - prm.tau_m[j];
            let tterm = dt * dt * inv_g;
            let ob = (f * mm + j) * p;
            for v in &mut k.data_mut()[ob..ob + p] {
                *v = prm.alpha * (-*v * inv_l - tterm).exp();
            }
        }
    }
    k
}

pub(crate) struct RbfGrads {
    pub q: Tensor,
    pub m: Tensor,
    pub alpha: f64,
    pub ell: f64,
    pub gamma: f64,
}

pub(crate) fn rbf_kernel_backward(
    q: &Tensor,
    m: &Tensor,
    prm: &RbfParams,
    kval: &Tensor,
    gk: &Tensor,
) -> RbfGrads {
    let (t, d, h, w) = q.dims4();
    let mm = m.shape()[0];
    let p = h * w;
    let d2 = sq_distances(q, m);
    let l2 = prm.ell * prm.ell;
    let mut gq = Tensor::zeros(q.shape());
    let mut gm = Tensor::zeros(m.shape());
    let (mut ga, mut gl, mut gg) = (0.0, 0.0, 0.0);
    let mut coef = vec![0.0; p];
    for f in 0..t {
        for j in 0..mm {
            let dt = prm.tau_q[f] - prm.tau_m[j];
            let ob = (f * mm + j) * p;
            let kv = &kval.data()[ob..ob + p];
            let gv = &gk.data()[ob..ob + p];
            let dv = &d2.data()[ob..ob + p];
            let mut sum_gk = 0.0;
            let mut sum_gkd = 0.0;
            for i in 0..p {
                let gkk = gv[i] * kv[i];
                sum_gk += gkk;
                sum_gkd += gkk * dv[i];
                // dK/dq = −K·(q−m)/ℓ²
                coef[i] = -gkk / l2;
            }
            ga += sum_gk / prm.alpha;
            gl += sum_gkd / (l2 * prm.ell);
            gg += sum_gk * dt * dt / (prm.gamma * prm.gamma * prm.gamma);
            for c in 0..d {
                let mv = m.data()[j * d + c];
                let qb = (f * d + c) * p;
                let mut acc = 0.0;
                let qs = &q.data()[qb..qb + p];
                let gqs = &mut gq.data_mut()[qb..qb + p];
                for i in 0..p {
                    let v = coef[i] * (qs[i] - mv);
                    gqs[i] += v;
                    acc += v;
                }
                gm.data_mut()[j * d + c] -= acc;
            }
        }
    }
    RbfGrads {
        q: gq,
        m: gm,
        alpha: ga,
        ell: gl,
        gamma: gg,
    }
}

/// Softmax across the channel axis of a `[T, C, H, W]` volume, with
/// per-location max subtraction.
pub(crate) fn softmax_channels(x: &Tensor) -> Tensor {
    let (t, c, h, w) = x.dims4();
    let p = h * w;
    let mut out = Tensor::zeros(x.shape());
    let xs = x.data();
    let os = out.data_mut();
    for f in 0..t {
        let base = f * c * p;
        for i in 0..p {
            let mut mx = f64::NEG_INFINITY;
            for ch in 0..c {
                mx = mx.max(xs[base + ch * p + i]);
            }
            let mut z = 0.0;
            for ch in 0..c {
                let e = (xs[base + ch * p + i] - mx).exp();
                os[base + ch * p + i] = e;
                z += e;
            }
            for ch in 0..c {
                os[base + ch * p + i] /= z;
            }
        }
    }
    out
}

pub(crate) fn softmax_channels_backward(y: &Tensor, gy: &Tensor) -> Tensor {
    let (t, c, h, w) = y.dims4();
    let p = h * w;
    let mut gx = Tensor::zeros(y.shape());
    let ys = y.data();
    let gs = gy.data();
    for f in 0..t {
        let base = f * c * p;
        for i in 0..p {
            let mut dot = 0.0;
            for ch in 0..c {
                dot += ys[base + ch * p + i] * gs[base + ch * p + i];
            }
            for ch in 0..c {
                let idx = base + ch * p + i;
                gx.data_mut()[idx] = ys[idx] * (gs[idx] - dot);
            }
        }
    }
    gx
}
