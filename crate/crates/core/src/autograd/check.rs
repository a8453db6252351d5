//! Central finite-difference gradients, used to audit the analytic
//! backward passes.

use super::params::{ParamId, ParamStore};

/// Step used by every gradient audit in the crate.
pub const FD_STEP: f64 = 1e-5;

/// Central differences of `f` with respect to selected scalar entries of
/// parameter `id`. The store is restored before returning.
pub fn numeric_grad<F>(store: &mut ParamStore, id: ParamId, indices: &[usize], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&ParamStore) -> f64,
{
    indices
        .iter()
        .map(|&i| {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + h;
            let up = f(store);
            store.get_mut(id).data_mut()[i] = orig - h;
            let down = f(store);
            store.get_mut(id).data_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`; zero when both vectors vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
