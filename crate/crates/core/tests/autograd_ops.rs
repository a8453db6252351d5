//! Every graph primitive checked against central finite differences.

use gpvd::autograd::check::{numeric_grad, relative_error, FD_STEP};
use gpvd::autograd::{Graph, ParamId, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Checks `mean(op(params) ⊙ R)` for every entry of every parameter.
fn check<F>(store: ParamStore, build: F)
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut store = store;
    let ids: Vec<ParamId> = store.ids().collect();
    let weights = std::cell::RefCell::new(None::<Tensor>);
    let eval = |store: &ParamStore, backward: bool| -> (f64, Vec<(ParamId, Tensor)>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(store, id)).collect();
        let y = build(&mut g, &vars);
        let shape = g.shape(y).to_vec();
        let r = weights
            .borrow_mut()
            .get_or_insert_with(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(99);
                rand_tensor(&mut rng, &shape, -1.0, 1.0)
            })
            .clone();
        let rv = g.constant(r);
        let prod = g.mul(y, rv);
        let loss = g.mean(prod);
        let val = g.value(loss).data()[0];
        if backward {
            g.backward(loss);
            (val, g.param_grads())
        } else {
            (val, vec![])
        }
    };
    let (_, grads) = eval(&store, true);
    for (id, ga) in grads {
        let idx: Vec<usize> = (0..store.get(id).len()).collect();
        let gn = numeric_grad(&mut store, id, &idx, FD_STEP, |s| eval(s, false).0);
        let err = relative_error(ga.data(), &gn);
        assert!(err < 1e-6, "param {} relative error {err}", store.name(id));
    }
}

fn store_with(shapes: &[(&str, &[usize], f64, f64)]) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut s = ParamStore::new();
    for (name, shape, lo, hi) in shapes {
        s.add(*name, rand_tensor(&mut rng, shape, *lo, *hi));
    }
    s
}

#[test]
fn elementwise_binary() {
    let s = store_with(&[("a", &[2, 3], -1.0, 1.0), ("b", &[2, 3], -1.0, 1.0)]);
    check(s.clone(), |g, v| g.add(v[0], v[1]));
    check(s.clone(), |g, v| g.sub(v[0], v[1]));
    check(s, |g, v| g.mul(v[0], v[1]));
}

#[test]
fn unary_maps() {
    let s = store_with(&[("x", &[2, 5], 0.2, 2.0)]);
    for f in [
        Graph::sigmoid,
        Graph::silu,
        Graph::softplus,
        Graph::exp,
        Graph::log,
        Graph::sqrt,
        Graph::square,
        Graph::abs,
    ] {
        check(s.clone(), |g, v| f(g, v[0]));
    }
    check(s.clone(), |g, v| g.unary(v[0], gpvd::autograd::Unary::Recip));
    check(s.clone(), |g, v| g.affine(v[0], -1.5, 0.3));
    check(s, |g, v| g.clamp(v[0], 0.5, 1.5));
}

#[test]
fn broadcasts() {
    let s = store_with(&[("x", &[2, 3, 4, 5], -1.0, 1.0), ("v", &[3], -1.0, 1.0), ("k", &[1], 0.5, 1.5)]);
    check(s.clone(), |g, v| g.add_channel(v[0], v[1]));
    check(s.clone(), |g, v| g.scale_by(v[0], v[2]));
    let s2 = store_with(&[("x", &[2, 3, 4, 5], -1.0, 1.0), ("g", &[2, 1, 4, 5], 0.0, 1.0), ("y", &[2, 3], -1.0, 1.0)]);
    check(s2.clone(), |g, v| g.mul_gate(v[0], v[1]));
    check(s2, |g, v| g.add_frame_channel(v[0], v[2]));
}

#[test]
fn convolutions() {
    let s = store_with(&[
        ("x", &[3, 2, 5, 6], -1.0, 1.0),
        ("pw", &[4, 2], -1.0, 1.0),
        ("pb", &[4], -1.0, 1.0),
        ("ds", &[2, 3, 3], -1.0, 1.0),
        ("db", &[2], -1.0, 1.0),
        ("dt", &[2, 3], -1.0, 1.0),
    ]);
    check(s.clone(), |g, v| g.pointwise(v[0], v[1], Some(v[2])));
    check(s.clone(), |g, v| g.dw_spatial(v[0], v[3], Some(v[4])));
    check(s.clone(), |g, v| g.dw_temporal(v[0], v[5], Some(v[4])));
    check(s, |g, v| g.dw_temporal(v[0], v[5], None));
}

#[test]
fn temporal_conv_short_clip() {
    let s = store_with(&[("x", &[1, 2, 4, 4], -1.0, 1.0), ("dt", &[2, 3], -1.0, 1.0)]);
    check(s, |g, v| g.dw_temporal(v[0], v[1], None));
}

#[test]
fn normalization_and_resampling() {
    let s = store_with(&[("x", &[2, 4, 4, 6], -1.0, 1.0), ("gain", &[4], 0.5, 1.5), ("bias", &[4], -0.5, 0.5)]);
    check(s.clone(), |g, v| g.channel_norm(v[0], v[1], v[2]));
    check(s.clone(), |g, v| g.unshuffle2(v[0]));
    check(s.clone(), |g, v| g.upsample2(v[0]));
    check(s.clone(), |g, v| g.avg_pool2(v[0]));
    check(s.clone(), |g, v| g.global_mean(v[0]));
    check(s.clone(), |g, v| g.grid_pool(v[0], 2, false));
    check(s.clone(), |g, v| g.grid_pool(v[0], 4, true));
    check(s, |g, v| g.softmax_channels(v[0]));
}

#[test]
fn structural_ops() {
    let s = store_with(&[("a", &[2, 3, 4, 4], -1.0, 1.0), ("b", &[2, 2, 4, 4], -1.0, 1.0)]);
    check(s.clone(), |g, v| g.concat(&[v[0], v[1]]));
    check(s.clone(), |g, v| g.slice_channels(v[0], 1, 2));
    check(s.clone(), |g, v| g.slice_time(v[0], 1, 1));
    check(s, |g, v| g.reshape(v[0], &[6, 16]));
    let m = store_with(&[("x", &[5, 3], -1.0, 1.0), ("w", &[4, 3], -1.0, 1.0), ("b", &[4], -1.0, 1.0)]);
    check(m.clone(), |g, v| g.linear(v[0], v[1], Some(v[2])));
    check(m, |g, v| g.slice_cols(v[0], 1, 2));
}

#[test]
fn rbf_kernel_all_inputs() {
    let s = store_with(&[
        ("q", &[3, 4, 3, 3], -1.0, 1.0),
        ("m", &[5, 4], -1.0, 1.0),
        ("alpha", &[1], 0.5, 1.5),
        ("ell", &[1], 0.8, 1.6),
        ("gamma", &[1], 0.3, 0.9),
    ]);
    check(s, |g, v| {
        let tau_q = vec![0.0, 0.5, 1.0];
        let tau_m = vec![0.5, 0.1, 0.9, 0.5, 0.3];
        g.rbf_kernel(v[0], v[1], v[2], v[3], v[4], tau_q, tau_m)
    });
}

#[test]
fn mean_of_scalar_chain() {
    let s = store_with(&[("x", &[3, 3], -1.0, 1.0)]);
    check(s, |g, v| {
        let sq = g.square(v[0]);
        g.mean(sq)
    });
}
