//! Coordinate-descent updates for the rotated random effects delta = U'b.
//!
//! Each outer iteration solves the generalized ridge WLS problem
//! min_delta sum_i w_i (Ytilde_i - X_i Theta - U_i delta)^2 + phi * delta' Lambda^-1 delta
//! by cycling the closed-form coordinate update
//! delta_j <- sum_i w_i U_ij (resid_i + U_ij delta_j) / (sum_i w_i U_ij^2 + phi / Lambda_j).

use nalgebra::{DMatrix, DVector};

/// Cycle coordinates of `delta` until the largest coordinate change in a
/// full cycle drops below `tol` or `max_cycles` is reached.
///
/// `resid` must hold the full working residual (target minus U*delta) on
/// entry and is kept in sync. `su2[j] = sum_i w_i U_ij^2` and
/// `ridge[j] = phi / Lambda_j` are precomputed. Returns cycles used and the
/// last max change.
#[allow(clippy::too_many_arguments)]
pub fn update_delta_inplace(
    delta: &mut DVector<f64>,
    resid: &mut DVector<f64>,
    u: &DMatrix<f64>,
    w: &DVector<f64>,
    su2: &DVector<f64>,
    ridge: &DVector<f64>,
    tol: f64,
    max_cycles: usize,
) -> (usize, f64) {
    let n = delta.len();
    let udata = u.as_slice();
    let ws = w.as_slice();
    let mut last_change = f64::INFINITY;
    for cycle in 0..max_cycles {
        let mut max_change: f64 = 0.0;
        for j in 0..n {
            let uj = &udata[j * n..(j + 1) * n];
            let denom = su2[j] + ridge[j];
            if denom <= 0.0 {
                continue;
            }
            let mut num = 0.0;
            for ((&ui, &wi), &ri) in uj.iter().zip(ws).zip(resid.iter()) {
                num += wi * ui * ri;
            }
            num += su2[j] * delta[j];
            let new = num / denom;
            let change = new - delta[j];
            if change != 0.0 {
                for (ri, &ui) in resid.iter_mut().zip(uj) {
                    *ri -= ui * change;
                }
                delta[j] = new;
                max_change = max_change.max(change.abs());
            }
        }
        last_change = max_change;
        if max_change < tol {
            return (cycle + 1, last_change);
        }
    }
    (max_cycles, last_change)
}

/// Standalone delta solve against a fixed target vector Ytilde - X*Theta.
#[allow(clippy::too_many_arguments)]
pub fn update_delta(
    delta: &mut DVector<f64>,
    u: &DMatrix<f64>,
    w: &DVector<f64>,
    lambda: &DVector<f64>,
    phi: f64,
    target: &DVector<f64>,
    tol: f64,
    max_cycles: usize,
) -> usize {
    let n = delta.len();
    let udata = u.as_slice();
    let su2 = DVector::from_fn(n, |j, _| {
        udata[j * n..(j + 1) * n]
            .iter()
            .zip(w.iter())
            .map(|(&ui, &wi)| wi * ui * ui)
            .sum::<f64>()
    });
    let ridge = DVector::from_fn(n, |j, _| phi / lambda[j]);
    let mut resid = target - u * &*delta;
    let (cycles, _) =
        update_delta_inplace(delta, &mut resid, u, w, &su2, &ridge, tol, max_cycles);
    cycles
}
