//! Central finite-difference gradient checks.

use crate::params::{Grads, ParamId, ParamStore};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    /// Largest `|a - n| / max(|a|, |n|, floor)` over checked entries.
    pub max_rel_error: f64,
}

/// Compares `loss`'s analytic gradient against `(f(x+h) - f(x-h)) / 2h` on
/// every entry of `params` (at most `per_param` entries each, evenly spaced).
/// The relative error uses `floor` as a minimum denominator so that
/// near-zero gradients compare absolutely.
pub fn check_gradients(
    store: &mut ParamStore,
    params: &[ParamId],
    per_param: usize,
    h: f64,
    floor: f64,
    mut loss: impl FnMut(&ParamStore) -> (f64, Grads),
) -> GradCheck {
    let (_, grads) = loss(store);
    let mut out = GradCheck { checked: 0, max_rel_error: 0.0 };
    for &id in params {
        let n = store.get(id).len();
        let step = (n / per_param.max(1)).max(1);
        let cols = store.get(id).ncols();
        for k in (0..n).step_by(step).take(per_param.max(1)) {
            let at = [k / cols, k % cols];
            let analytic = grads.get(id).map_or(0.0, |g| g[at]);
            let orig = store.get(id)[at];
            store.get_mut(id)[at] = orig + h;
            let up = loss(store).0;
            store.get_mut(id)[at] = orig - h;
            let down = loss(store).0;
            store.get_mut(id)[at] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            out.max_rel_error = out.max_rel_error.max(rel);
            out.checked += 1;
        }
    }
    out
}
