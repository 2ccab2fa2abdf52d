//! Central finite-difference verification of tape gradients.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tape::{Tape, Var};

/// Coordinates probed per tensor when a tensor is larger than this.
pub const COORDS_PER_TENSOR: usize = 64;

/// Relative errors are measured against `max(|analytic|, |numeric|, REL_FLOOR)`.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub coords_checked: usize,
    pub pass: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compare the tape gradient of the scalar built by `f` against
/// `(f(θ+h) − f(θ−h)) / 2h`, coordinate by coordinate.
///
/// `f` must build the same scalar every time it is called on the same
/// parameters; a mismatch between two evaluations at θ is reported as a
/// contract error.
pub fn finite_diff_check<F>(f: F, params: &ParamStore, h: f64, tol: f64, seed: u64) -> Result<FdReport>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::contract(format!("finite-difference step must be positive, got {h}")));
    }
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let root = f(&mut tape, &bound)?;
        tape.scalar(root)
    };

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let root = f(&mut tape, &bound)?;
    let f0 = tape.scalar(root)?;
    tape.backward(root)?;
    let grads = params.grads(&tape, &bound);

    let again = eval(params)?;
    if again.to_bits() != f0.to_bits() {
        return Err(Error::contract(format!(
            "function is not deterministic: {f0} then {again}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    let mut checked = 0;
    for (id, grad) in params.ids().zip(&grads) {
        let n = params.get(id).len();
        let coords: Vec<usize> = if n <= COORDS_PER_TENSOR {
            (0..n).collect()
        } else {
            sample(&mut rng, n, COORDS_PER_TENSOR).into_vec()
        };
        for c in coords {
            let orig = params.get(id).data()[c];
            work.get_mut(id).data_mut()[c] = orig + h;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[c] = orig - h;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grad.data()[c];
            max_rel = max_rel.max(relative_error(analytic, numeric));
            max_abs = max_abs.max((analytic - numeric).abs());
            checked += 1;
        }
    }
    Ok(FdReport {
        max_rel_err: max_rel,
        max_abs_err: max_abs,
        coords_checked: checked,
        pass: max_rel < tol,
    })
}
