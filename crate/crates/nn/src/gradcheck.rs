//! Central finite-difference utilities for verifying analytic gradients.

use ndarray::Array2;

use crate::params::{ParamId, ParamStore};

/// Central finite-difference gradient of `f` with respect to parameter `id`.
pub fn finite_difference_grad<F>(
    store: &mut ParamStore,
    id: ParamId,
    step: f64,
    mut f: F,
) -> Array2<f64>
where
    F: FnMut(&ParamStore) -> f64,
{
    let shape = store.value(id).raw_dim();
    let mut grad = Array2::zeros(shape);
    let n_rows = grad.nrows();
    let n_cols = grad.ncols();
    for r in 0..n_rows {
        for c in 0..n_cols {
            let orig = store.value(id)[[r, c]];
            store.value_mut(id)[[r, c]] = orig + step;
            let plus = f(store);
            store.value_mut(id)[[r, c]] = orig - step;
            let minus = f(store);
            store.value_mut(id)[[r, c]] = orig;
            grad[[r, c]] = (plus - minus) / (2.0 * step);
        }
    }
    grad
}

/// Largest relative error between analytic and finite-difference gradients
/// over a parameter group. Relative error uses `|a − f| / max(|a|, |f|,
/// floor)` per element.
pub fn max_relative_error<F>(
    store: &mut ParamStore,
    group: &[ParamId],
    step: f64,
    floor: f64,
    mut f: F,
) -> f64
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut worst = 0.0f64;
    for &id in group {
        let fd = finite_difference_grad(store, id, step, &mut f);
        let analytic = store.grad(id).clone();
        for (a, d) in analytic.iter().zip(fd.iter()) {
            let denom = a.abs().max(d.abs()).max(floor);
            let rel = (a - d).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}
