//! Recovery of `u` from the collocation values of `v = u''`.
//!
//! `u_h(x) = int_0^x v_h(s)(x-s) ds - x int_0^1 v_h(s)(1-s) ds` with `v_h` the
//! piecewise-linear interpolant of `v_0..v_{N+1}`.

use crate::error::{Error, Result};
use crate::model::Grid;

/// Running quantities of the nodal recurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionState {
    /// `I = int_0^1 v_h(s)(1-s) ds`
    pub big_i: f64,
    /// `running_v[n] = int_0^{x_n} v_h`, `n = 0..N`
    pub running_v: Vec<f64>,
}

fn check_len(v: &[f64], grid: &Grid) -> Result<()> {
    if v.len() != grid.n() + 2 {
        return Err(Error::DimensionMismatch {
            expected: grid.n() + 2,
            actual: v.len(),
        });
    }
    Ok(())
}

/// Prepends `v_0` to the solver output `v_1..v_{N+1}`.
pub fn with_v0(v0: f64, v: &[f64]) -> Vec<f64> {
    let mut full = Vec::with_capacity(v.len() + 1);
    full.push(v0);
    full.extend_from_slice(v);
    full
}

/// Exact `int_0^1 v_h(s)(1-s) ds` for nodal values `v_0..v_{N+1}`.
pub fn weighted_integral_i(v: &[f64], grid: &Grid) -> Result<f64> {
    check_len(v, grid)?;
    let h = grid.h();
    let x = grid.nodes();
    Ok((0..=grid.n())
        .map(|m| {
            let (w0, w1) = (1.0 - x[m], 1.0 - x[m + 1]);
            h / 6.0 * (v[m] * (2.0 * w0 + w1) + v[m + 1] * (w0 + 2.0 * w1))
        })
        .sum())
}

/// `I` together with the running integrals of `v_h`.
pub fn reconstruction_state(v: &[f64], grid: &Grid) -> Result<ReconstructionState> {
    let big_i = weighted_integral_i(v, grid)?;
    let h = grid.h();
    let mut running_v = Vec::with_capacity(grid.n() + 1);
    let mut acc = 0.0;
    running_v.push(acc);
    for n in 0..grid.n() {
        acc += h * (v[n] + v[n + 1]) / 2.0;
        running_v.push(acc);
    }
    Ok(ReconstructionState { big_i, running_v })
}

/// Nodal values `u_1..u_N` from `v_0..v_{N+1}` in `O(N)`.
pub fn reconstruct_u(v: &[f64], grid: &Grid) -> Result<Vec<f64>> {
    let big_i = weighted_integral_i(v, grid)?;
    let h = grid.h();
    let h2 = h * h / 6.0;
    let mut u = Vec::with_capacity(grid.n());
    let mut un = 0.0;
    let mut running = 0.0;
    for n in 0..grid.n() {
        un += h * running + h2 * (2.0 * v[n] + v[n + 1]) - h * big_i;
        u.push(un);
        running += h * (v[n] + v[n + 1]) / 2.0;
    }
    Ok(u)
}

/// `u_h(x)` by exact elementwise integration.
pub fn u_h_at(x: f64, v: &[f64], grid: &Grid) -> Result<f64> {
    check_len(v, grid)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::invalid(format!("x = {x} outside [0, 1]")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let big_i = weighted_integral_i(v, grid)?;
    let nodes = grid.nodes();
    let h = grid.h();
    let mut acc = 0.0;
    for m in 0..=grid.n() {
        let (a, b) = (nodes[m], nodes[m + 1]);
        if a >= x {
            break;
        }
        let end = b.min(x);
        // v_h on [a, end] is linear; integrate it against (x - s) exactly
        let va = v[m];
        let ve = v[m] + (v[m + 1] - v[m]) * (end - a) / h;
        let (wa, we) = (x - a, x - end);
        acc += (end - a) / 6.0 * (va * (2.0 * wa + we) + ve * (wa + 2.0 * we));
    }
    Ok(acc - x * big_i)
}
