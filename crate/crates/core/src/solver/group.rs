//! Per-group updates for the penalized blocks (beta_j, gamma_j).
//!
//! The group-null test is the exact subgradient condition for the pair to be
//! zero. When it fails, either the gamma-only-zero closed form applies, or a
//! majorization-minimization loop (replacing the group norm by a quadratic
//! upper bound at the current iterate) alternates closed-form coordinate
//! updates until stationarity.

use crate::error::{Error, Result};

/// Soft-thresholding operator S_t(a): the l1 proximal map.
pub fn soft_threshold(a: f64, t: f64) -> f64 {
    if a > t {
        a - t
    } else if a < -t {
        a + t
    } else {
        0.0
    }
}

/// Weighted inner products of one group against the working residual
/// excluding the group's own contribution:
/// a0 = sum_i w_i G_ij r_{i;-j},   b0 = sum_i w_i (D_i G_ij) r_{i;-j},
/// sg = sum_i w_i G_ij^2,  sdg = sum_i w_i (D_i G_ij)^2,  c0 = sum_i w_i D_i G_ij^2.
#[derive(Debug, Clone, Copy)]
pub struct GroupStats {
    pub a0: f64,
    pub b0: f64,
    pub sg: f64,
    pub sdg: f64,
    pub c0: f64,
}

/// Exact zero test for the group: true means (beta_j, gamma_j) = (0, 0)
/// solves the group subproblem. `lam1 = (1-rho)*lambda_j*s_t`,
/// `lam2 = rho*lambda_j*s_t`.
pub fn group_null_test(stats: &GroupStats, lam1: f64, lam2: f64) -> bool {
    let s = soft_threshold(stats.b0, lam2);
    stats.a0 * stats.a0 + s * s <= lam1 * lam1
}

/// Stationarity residual (max-norm) of the group subgradient system at
/// (beta, gamma). Zero groups use the null-test slack instead.
pub fn group_kkt_residual(stats: &GroupStats, lam1: f64, lam2: f64, beta: f64, gamma: f64) -> f64 {
    if beta == 0.0 && gamma == 0.0 {
        let s = soft_threshold(stats.b0, lam2);
        return (stats.a0.hypot(s) - lam1).max(0.0);
    }
    let norm = beta.hypot(gamma);
    let r1 = stats.a0 - stats.sg * beta - stats.c0 * gamma - lam1 * beta / norm;
    let r2 = if gamma != 0.0 {
        stats.b0 - stats.c0 * beta - stats.sdg * gamma - lam2 * gamma.signum() - lam1 * gamma / norm
    } else {
        ((stats.b0 - stats.c0 * beta).abs() - lam2).max(0.0)
    };
    r1.abs().max(r2.abs())
}

/// Solve the group subproblem, starting from the current (beta, gamma).
///
/// Returns the updated pair and the inner iterations used. The sequence is:
/// group-null test, then the gamma = 0 closed form, then MM iterations with
/// the norm majorized at each pass. A vanishing group norm re-enters the
/// null test rather than dividing by zero.
pub fn update_group(
    stats: &GroupStats,
    lam1: f64,
    lam2: f64,
    beta: f64,
    gamma: f64,
    tol_cd: f64,
    max_inner: usize,
) -> Result<(f64, f64, usize)> {
    if group_null_test(stats, lam1, lam2) {
        return Ok((0.0, 0.0, 0));
    }
    if stats.sg <= 0.0 {
        // No usable signal in the main-effect column; without it the group
        // cannot satisfy the hierarchy, so it stays out of the model.
        return Ok((0.0, 0.0, 0));
    }
    // Candidate with gamma = 0.
    let beta_try = soft_threshold(stats.a0, lam1) / stats.sg;
    if (stats.b0 - beta_try * stats.c0).abs() <= lam2 {
        return Ok((beta_try, 0.0, 0));
    }

    // MM loop; seed from the current pair when nonzero, else from the
    // single-coordinate candidates.
    let (mut b, mut g) = if beta != 0.0 || gamma != 0.0 {
        (beta, gamma)
    } else {
        let g_try = if stats.sdg > 0.0 {
            soft_threshold(stats.b0 - beta_try * stats.c0, lam2) / stats.sdg
        } else {
            0.0
        };
        (beta_try, g_try)
    };
    let kkt_tol = 1e-8 * stats.a0.abs().max(stats.b0.abs()).max(1.0);
    let mut change = f64::INFINITY;
    for it in 0..max_inner {
        let norm = b.hypot(g);
        if norm == 0.0 {
            // Guard: re-run the exact zero test before dividing by the norm.
            if group_null_test(stats, lam1, lam2) {
                return Ok((0.0, 0.0, it));
            }
            b = if beta_try != 0.0 { beta_try } else { f64::EPSILON };
            continue;
        }
        let ridge = lam1 / norm;
        let b_new = if stats.sg + ridge > 0.0 {
            (stats.a0 - g * stats.c0) / (stats.sg + ridge)
        } else {
            0.0
        };
        let g_new = if stats.sdg + ridge > 0.0 {
            soft_threshold(stats.b0 - b_new * stats.c0, lam2) / (stats.sdg + ridge)
        } else {
            0.0
        };
        change = (b_new - b).abs().max((g_new - g).abs());
        b = b_new;
        g = g_new;
        if change < tol_cd && group_kkt_residual(stats, lam1, lam2, b, g) <= kkt_tol {
            return Ok((b, g, it + 1));
        }
    }
    if change > tol_cd.max(1e-10) * 10.0 {
        return Err(Error::NonConvergence {
            what: format!(
                "group MM update (a0={:.3e}, b0={:.3e}, lam1={:.3e}, lam2={:.3e})",
                stats.a0, stats.b0, lam1, lam2
            ),
            iterations: max_inner,
            trace: vec![format!("last iterate beta={b:.6e} gamma={g:.6e} change={change:.3e}")],
        });
    }
    Ok((b, g, max_inner))
}
