//! Central finite-difference oracle for tape gradients.

use super::tape::{Tape, TensorId};
use super::tensor::ParamStore;
use crate::error::Result;

/// Relative error with the usual guarded denominator.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Max over all coordinates of the relative error between the tape gradient
/// of `f` at `x` and the central difference (f(x+e) - f(x-e)) / 2e.
pub fn gradient_check(
    f: impl Fn(&mut Tape, TensorId) -> Result<TensorId>,
    shape: &[usize],
    x: &[f64],
    eps: f64,
) -> Result<f64> {
    let coords: Vec<usize> = (0..x.len()).collect();
    gradient_check_coords(f, shape, x, eps, &coords)
}

/// Like [`gradient_check`] but restricted to a coordinate subset; used for
/// composite losses whose full parameter count makes exhaustive differencing
/// too slow.
pub fn gradient_check_coords(
    f: impl Fn(&mut Tape, TensorId) -> Result<TensorId>,
    shape: &[usize],
    x: &[f64],
    eps: f64,
    coords: &[usize],
) -> Result<f64> {
    let mut store = ParamStore::new();
    let mut tape = Tape::new();
    let xid = tape.leaf(shape.to_vec(), x.to_vec());
    let loss = f(&mut tape, xid)?;
    tape.backward(loss, &mut store)?;
    let analytic: Vec<f64> = tape.grad(xid).map(|g| g.to_vec()).unwrap_or_default();

    let eval = |vals: &[f64]| -> Result<f64> {
        let mut t = Tape::new();
        let id = t.leaf(shape.to_vec(), vals.to_vec());
        let out = f(&mut t, id)?;
        Ok(t.scalar(out))
    };

    let mut worst: f64 = 0.0;
    let mut probe = x.to_vec();
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + eps;
        let hi = eval(&probe)?;
        probe[i] = orig - eps;
        let lo = eval(&probe)?;
        probe[i] = orig;
        let fd = (hi - lo) / (2.0 * eps);
        worst = worst.max(rel_err(analytic.get(i).copied().unwrap_or(0.0), fd));
    }
    Ok(worst)
}
