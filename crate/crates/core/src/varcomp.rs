//! Variance-component estimation under the null model (beta = gamma = 0).
//!
//! The fit alternates two steps until the parameters stabilize:
//! construction of the PQL working response Ytilde = eta + Delta*(y - mu)
//! with residual covariance phi*Delta, and an average-information REML
//! update of (tau_g, tau_d, phi) for the working linear mixed model
//! Ytilde = Z*theta + D*alpha + b + eps, b ~ N(0, tau_g*K + tau_d*K^D).
//! For the gaussian family the working model is exact (Ytilde = y) and the
//! loop reduces to plain AI-REML.

use nalgebra::{DMatrix, DVector};

use crate::data::{clamp_mu, Dataset, Family, FamilyLink};
use crate::error::{Error, Result};
use crate::kinship::KinshipPair;

/// Relative parameter-change tolerance for the alternating fit.
pub const TOL_VC: f64 = 1e-4;
/// Iteration cap for the alternating fit.
pub const MAX_ITER_VC: usize = 100;
/// Maximum step halvings per AI update.
const MAX_BACKTRACKS: usize = 20;

/// One iteration of the variance-component trace.
#[derive(Debug, Clone, Copy)]
pub struct VcIteration {
    pub iter: usize,
    pub tau_g: f64,
    pub tau_d: f64,
    pub phi: f64,
    pub reml_loglik: f64,
    pub backtracks: usize,
    pub used_em: bool,
}

/// The null model: variance components, dispersion and null fixed effects.
#[derive(Debug, Clone)]
pub struct NullModel {
    pub family: Family,
    pub tau_g: f64,
    pub tau_d: f64,
    pub phi: f64,
    /// Null covariate effects (length m, intercept first).
    pub theta0: DVector<f64>,
    /// Null exposure effect.
    pub alpha0: f64,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<VcIteration>,
}

/// Options for [`fit_null_aireml`].
#[derive(Debug, Clone)]
pub struct VcOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Override the family default for estimating phi.
    pub estimate_dispersion: Option<bool>,
}

impl Default for VcOptions {
    fn default() -> Self {
        VcOptions { max_iter: MAX_ITER_VC, tol: TOL_VC, estimate_dispersion: None }
    }
}

/// Diagonal Delta_ii = nu(mu_i) g'(mu_i)^2 / a_i of the working-residual
/// scale matrix. Equals 1/(mu(1-mu)) for binomial, 1/a_i for gaussian.
fn delta_diag(family: &FamilyLink, mu: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(mu.len(), |i, _| {
        let m = clamp_mu(family.family, mu[i]);
        family.family.variance(m) * family.family.dlink(m).powi(2) / family.prior_weight(i)
    })
}

/// Restricted log-likelihood of the working LMM with covariance
/// V = tau_g*K + tau_d*K^D + phi*Delta:
/// -1/2 [ (n-r) log 2pi + log|V| + log|X' V^-1 X| + r' V^-1 r ]
/// with r the GLS residual.
pub fn restricted_loglik(
    tau_g: f64,
    tau_d: f64,
    phi: f64,
    kin: &KinshipPair,
    delta: &DVector<f64>,
    x: &DMatrix<f64>,
    ytilde: &DVector<f64>,
) -> Result<f64> {
    let n = ytilde.len();
    let r = x.ncols();
    let mut v = &kin.k * tau_g + &kin.kd * tau_d;
    for i in 0..n {
        v[(i, i)] += phi * delta[i];
    }
    let chol = v
        .cholesky()
        .ok_or_else(|| Error::Numerical("working covariance is not positive definite".into()))?;
    let logdet_v = 2.0 * (0..n).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>();
    let vinv_x = chol.solve(x);
    let vinv_y = chol.solve(ytilde);
    let xtvx = x.transpose() * &vinv_x;
    let xtvy = x.transpose() * &vinv_y;
    let small = xtvx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("X' V^-1 X is not positive definite".into()))?;
    let logdet_xtvx = 2.0 * (0..r).map(|i| small.l_dirty()[(i, i)].ln()).sum::<f64>();
    let nu = small.solve(&xtvy);
    let quad = ytilde.dot(&vinv_y) - xtvy.dot(&nu);
    let c = (n - r) as f64 * (2.0 * std::f64::consts::PI).ln();
    Ok(-0.5 * (c + logdet_v + logdet_xtvx + quad))
}

/// Quantities computed at one parameter point of the working LMM.
struct RemlPoint {
    p: DMatrix<f64>,
    py: DVector<f64>,
    loglik: f64,
    nu: DVector<f64>,
    vinv_resid: DVector<f64>,
}

impl RemlPoint {
    fn compute(
        tau_g: f64,
        tau_d: f64,
        phi: f64,
        kin: &KinshipPair,
        delta: &DVector<f64>,
        x: &DMatrix<f64>,
        ytilde: &DVector<f64>,
    ) -> Result<RemlPoint> {
        let n = ytilde.len();
        let r = x.ncols();
        let mut v = &kin.k * tau_g + &kin.kd * tau_d;
        for i in 0..n {
            v[(i, i)] += phi * delta[i];
        }
        let chol = v.cholesky().ok_or_else(|| {
            Error::Numerical("working covariance is not positive definite".into())
        })?;
        let logdet_v = 2.0 * (0..n).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>();
        let vinv = chol.inverse();
        let vinv_x = &vinv * x;
        let xtvx = x.transpose() * &vinv_x;
        let small = xtvx
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("X' V^-1 X is not positive definite".into()))?;
        let logdet_xtvx = 2.0 * (0..r).map(|i| small.l_dirty()[(i, i)].ln()).sum::<f64>();
        let xtvy = vinv_x.transpose() * ytilde;
        let nu = small.solve(&xtvy);
        // P = V^-1 - V^-1 X (X'V^-1X)^-1 X'V^-1
        let minv_bt = small.solve(&vinv_x.transpose());
        let p = &vinv - &vinv_x * &minv_bt;
        let py = &p * ytilde;
        let quad = ytilde.dot(&py);
        let c = (n - r) as f64 * (2.0 * std::f64::consts::PI).ln();
        let loglik = -0.5 * (c + logdet_v + logdet_xtvx + quad);
        let vinv_resid = &vinv * &(ytilde - x * &nu);
        Ok(RemlPoint { p, py, loglik, nu, vinv_resid })
    }

    /// Score dl/dtheta_k = -1/2 [tr(P V_k) - Py' V_k Py] for V_k symmetric.
    fn score(&self, vk: &DMatrix<f64>) -> f64 {
        let tr: f64 = self.p.iter().zip(vk.iter()).map(|(a, b)| a * b).sum();
        let quad = self.py.dot(&(vk * &self.py));
        -0.5 * (tr - quad)
    }
}

fn sample_variance(v: &DVector<f64>) -> f64 {
    let n = v.len() as f64;
    let mean = v.sum() / n;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0)
}

/// IRLS fit of the fixed-effects-only GLM, used for initialization.
fn glm_irls(x: &DMatrix<f64>, y: &DVector<f64>, family: &FamilyLink) -> Result<DVector<f64>> {
    let n = x.nrows();
    let r = x.ncols();
    if family.family == Family::Gaussian {
        let xtx = x.transpose() * x;
        let chol = xtx
            .cholesky()
            .ok_or_else(|| Error::Numerical("design matrix is rank deficient".into()))?;
        return Ok(chol.solve(&(x.transpose() * y)));
    }
    let ybar = (y.sum() / n as f64).clamp(0.01, 0.99);
    let mut coef = DVector::zeros(r);
    coef[0] = (ybar / (1.0 - ybar)).ln();
    for _ in 0..50 {
        let eta = x * &coef;
        let mu = eta.map(|e| family.family.inv_link(e));
        let w = DVector::from_fn(n, |i, _| {
            let m = clamp_mu(Family::Binomial, mu[i]);
            family.prior_weight(i) * m * (1.0 - m)
        });
        let z = DVector::from_fn(n, |i, _| eta[i] + (y[i] - mu[i]) / w[i].max(1e-12));
        let mut xtwx = DMatrix::zeros(r, r);
        let mut xtwz = DVector::zeros(r);
        for i in 0..n {
            let xi = x.row(i);
            for a in 0..r {
                xtwz[a] += w[i] * xi[a] * z[i];
                for b in 0..r {
                    xtwx[(a, b)] += w[i] * xi[a] * xi[b];
                }
            }
        }
        let chol = xtwx
            .cholesky()
            .ok_or_else(|| Error::Numerical("IRLS normal equations are singular".into()))?;
        let new = chol.solve(&xtwz);
        let change = (&new - &coef).abs().max();
        coef = new;
        if change < 1e-10 {
            break;
        }
    }
    Ok(coef)
}

struct InnerOutcome {
    tau: [f64; 2],
    phi: f64,
    at_zero: [bool; 2],
    loglik: f64,
    backtracks: usize,
    used_em: bool,
    nu: DVector<f64>,
    vinv_resid: DVector<f64>,
}

/// AI-REML iterations at a fixed working model (Ytilde, Delta), with
/// boundary handling, jittered-AI retry, EM fallback and step halving.
#[allow(clippy::too_many_arguments)]
fn aireml_fixed_working(
    mut tau: [f64; 2],
    mut phi: f64,
    mut at_zero: [bool; 2],
    degenerate: [bool; 2],
    estimate_phi: bool,
    phi_floor: f64,
    kin: &KinshipPair,
    delta: &DVector<f64>,
    x: &DMatrix<f64>,
    ytilde: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<InnerOutcome> {
    let n = ytilde.len();
    let mut total_backtracks = 0;
    let mut any_em = false;
    for _ in 0..max_iter {
        let point = RemlPoint::compute(tau[0], tau[1], phi, kin, delta, x, ytilde)?;

        let score_g = point.score(&kin.k);
        let score_d = point.score(&kin.kd);
        let score_phi = if estimate_phi {
            let vphi = DMatrix::from_diagonal(delta);
            point.score(&vphi)
        } else {
            0.0
        };

        // Release boundary components whose score wants them positive.
        if at_zero[0] && score_g > 0.0 && !degenerate[0] {
            at_zero[0] = false;
        }
        if at_zero[1] && score_d > 0.0 && !degenerate[1] {
            at_zero[1] = false;
        }

        // Free parameter list: 0 = tau_g, 1 = tau_d, 2 = phi.
        let mut free: Vec<usize> = Vec::new();
        if !at_zero[0] {
            free.push(0);
        }
        if !at_zero[1] {
            free.push(1);
        }
        if estimate_phi {
            free.push(2);
        }
        if free.is_empty() {
            break;
        }

        let scores = [score_g, score_d, score_phi];
        let vks: Vec<DMatrix<f64>> = free
            .iter()
            .map(|&k| match k {
                0 => kin.k.clone(),
                1 => kin.kd.clone(),
                _ => DMatrix::from_diagonal(delta),
            })
            .collect();

        // Average information over the free set:
        // AI_kl = 1/2 (V_k Py)' P (V_l Py).
        let vk_py: Vec<DVector<f64>> = vks.iter().map(|vk| vk * &point.py).collect();
        let nf = free.len();
        let mut ai = DMatrix::zeros(nf, nf);
        for a in 0..nf {
            let p_vb = &point.p * &vk_py[a];
            for b in a..nf {
                let v = 0.5 * vk_py[b].dot(&p_vb);
                ai[(a, b)] = v;
                ai[(b, a)] = v;
            }
        }
        let score_free = DVector::from_fn(nf, |a, _| scores[free[a]]);
        let (mut step, used_em) = match ai.clone().cholesky() {
            Some(chol) => (chol.solve(&score_free), false),
            None => {
                // Retry with a diagonal jitter before giving up on the
                // Newton direction.
                let jitter = 1e-8 * ai.diagonal().abs().max().max(1.0);
                let mut ai_j = ai.clone();
                for a in 0..nf {
                    ai_j[(a, a)] += jitter;
                }
                match ai_j.cholesky() {
                    Some(chol) => (chol.solve(&score_free), false),
                    None => {
                        // EM-REML fallback:
                        // theta_k += theta_k^2 (Py'V_k Py - tr(PV_k)) / n.
                        let mut em = DVector::zeros(nf);
                        for a in 0..nf {
                            let cur = if free[a] == 2 { phi } else { tau[free[a]] };
                            em[a] = cur * cur * 2.0 * scores[free[a]] / n as f64;
                        }
                        (em, true)
                    }
                }
            }
        };
        any_em |= used_em;

        // Step halving on the restricted likelihood, projecting into the
        // feasible region at each trial.
        let (mut new_tau, mut new_phi);
        loop {
            new_tau = tau;
            new_phi = phi;
            for (a, &k) in free.iter().enumerate() {
                match k {
                    0 | 1 => new_tau[k] = (tau[k] + step[a]).max(0.0),
                    _ => new_phi = (phi + step[a]).max(phi_floor),
                }
            }
            let trial =
                restricted_loglik(new_tau[0], new_tau[1], new_phi, kin, delta, x, ytilde);
            match trial {
                Ok(ll) if ll >= point.loglik - 1e-10 => break,
                _ if total_backtracks < MAX_BACKTRACKS * max_iter => {
                    total_backtracks += 1;
                    step *= 0.5;
                }
                _ => break,
            }
        }

        let rel_change = {
            let mut c: f64 = 0.0;
            for k in 0..2 {
                c = c.max((new_tau[k] - tau[k]).abs() / tau[k].abs().max(1.0));
            }
            if estimate_phi {
                c = c.max((new_phi - phi).abs() / phi.abs().max(1.0));
            }
            c
        };
        tau = new_tau;
        phi = new_phi;
        for k in 0..2 {
            if tau[k] == 0.0 {
                at_zero[k] = true;
            }
        }
        if rel_change < tol {
            break;
        }
    }
    let point = RemlPoint::compute(tau[0], tau[1], phi, kin, delta, x, ytilde)?;
    Ok(InnerOutcome {
        tau,
        phi,
        at_zero,
        loglik: point.loglik,
        backtracks: total_backtracks,
        used_em: any_em,
        nu: point.nu,
        vinv_resid: point.vinv_resid,
    })
}

/// Fit the null model by alternating PQL working-response construction and
/// AI-REML updates of (tau_g, tau_d, phi).
///
/// Components proposed negative are clamped at 0 and dropped from the AI
/// system; they re-enter when their score turns positive. A singular AI
/// matrix falls back to one EM-REML step. Non-convergence after
/// `opts.max_iter` iterations is an error carrying the iteration trace.
pub fn fit_null_aireml(
    dataset: &Dataset,
    kin: &KinshipPair,
    family: &FamilyLink,
    opts: &VcOptions,
) -> Result<NullModel> {
    dataset.validate_for_fit(family.family)?;
    let n = dataset.n_samples();
    let m = dataset.n_covariates();
    if kin.n() != n {
        return Err(Error::Dimension(format!("kinship is {}x{} but n = {n}", kin.n(), kin.n())));
    }
    // X = [Z D]
    let mut x = DMatrix::zeros(n, m + 1);
    x.view_mut((0, 0), (n, m)).copy_from(&dataset.z);
    x.set_column(m, &dataset.d);

    let estimate_phi = opts
        .estimate_dispersion
        .unwrap_or(!family.family.dispersion_fixed());

    // Initial GLM fit (no random effects).
    let mut nu = glm_irls(&x, &dataset.y, family)?;
    let mut eta = &x * &nu;
    let mut mu = eta.map(|e| family.family.inv_link(e));
    let mut delta = delta_diag(family, &mu);
    let mut ytilde = match family.family {
        Family::Gaussian => dataset.y.clone(),
        Family::Binomial => {
            DVector::from_fn(n, |i, _| eta[i] + delta[i] * (dataset.y[i] - mu[i]))
        }
    };

    let resid = &ytilde - &x * &nu;
    let vr = sample_variance(&resid).max(1e-8);
    let mut tau = [0.1 * vr, 0.1 * vr];
    let mut phi = if estimate_phi { (0.5 * vr).max(1e-8) } else { 1.0 };
    let phi_floor = 1e-8 * vr.max(1.0);
    let mut at_zero = [false, false];
    // A structurally zero kinship matrix leaves its component unidentified;
    // pin it at zero instead of letting the AI system degenerate.
    let degenerate = [kin.k.abs().max() == 0.0, kin.kd.abs().max() == 0.0];
    for k in 0..2 {
        if degenerate[k] {
            tau[k] = 0.0;
            at_zero[k] = true;
        }
    }

    let mut trace: Vec<VcIteration> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    // Canonical PQL nesting: the inner loop runs AI-REML to convergence on
    // the frozen working model; the outer loop refreshes the working model.
    // A detected period-2 oscillation of the outer alternation switches on
    // persistent damping of the linear predictor.
    let mut outer_params: Vec<[f64; 3]> = Vec::new();
    let mut damping = 1.0;

    for outer in 0..opts.max_iter {
        iterations = outer + 1;
        let inner = aireml_fixed_working(
            tau,
            phi,
            at_zero,
            degenerate,
            estimate_phi,
            phi_floor,
            kin,
            &delta,
            &x,
            &ytilde,
            opts.tol,
            60,
        )?;
        tau = inner.tau;
        phi = inner.phi;
        at_zero = inner.at_zero;
        trace.push(VcIteration {
            iter: outer,
            tau_g: tau[0],
            tau_d: tau[1],
            phi,
            reml_loglik: inner.loglik,
            backtracks: inner.backtracks,
            used_em: inner.used_em,
        });

        let rel_change = outer_params.last().map_or(f64::INFINITY, |prev| {
            let mut c: f64 = 0.0;
            for k in 0..2 {
                c = c.max((tau[k] - prev[k]).abs() / prev[k].abs().max(1.0));
            }
            if estimate_phi {
                c = c.max((phi - prev[2]).abs() / prev[2].abs().max(1.0));
            }
            c
        });
        if outer_params.len() >= 2 {
            let two_ago = outer_params[outer_params.len() - 2];
            let latest = outer_params[outer_params.len() - 1];
            let cycle = (tau[0] - two_ago[0])
                .abs()
                .max((tau[1] - two_ago[1]).abs())
                .max((phi - two_ago[2]).abs());
            let movement = (tau[0] - latest[0])
                .abs()
                .max((tau[1] - latest[1]).abs())
                .max((phi - latest[2]).abs());
            if movement > opts.tol && cycle < 0.2 * movement {
                damping = 0.5;
            }
        }
        outer_params.push([tau[0], tau[1], phi]);

        // GLS fixed effects and BLUP at the updated parameters, then refresh
        // the working model (a no-op for gaussian responses).
        nu = inner.nu.clone();
        let sigma_b = &kin.k * tau[0] + &kin.kd * tau[1];
        let b = &sigma_b * &inner.vinv_resid;
        if family.family == Family::Binomial {
            let eta_new = &x * &nu + &b;
            eta = &eta_new * damping + &eta * (1.0 - damping);
            mu = eta.map(|e| family.family.inv_link(e));
            delta = delta_diag(family, &mu);
            ytilde = DVector::from_fn(n, |i, _| eta[i] + delta[i] * (dataset.y[i] - mu[i]));
        }

        if rel_change < opts.tol {
            converged = true;
            break;
        }
    }

    if !converged {
        return Err(Error::NonConvergence {
            what: "AI-REML null fit".into(),
            iterations,
            trace: trace
                .iter()
                .map(|t| {
                    format!(
                        "iter {}: tau_g={:.6e} tau_d={:.6e} phi={:.6e} loglik={:.8e}",
                        t.iter, t.tau_g, t.tau_d, t.phi, t.reml_loglik
                    )
                })
                .collect(),
        });
    }

    // Final GLS polish at the converged parameters.
    let point = RemlPoint::compute(tau[0], tau[1], phi, kin, &delta, &x, &ytilde)?;
    let nu_final = point.nu.clone();
    Ok(NullModel {
        family: family.family,
        tau_g: tau[0],
        tau_d: tau[1],
        phi,
        theta0: DVector::from_fn(m, |i, _| nu_final[i]),
        alpha0: nu_final[m],
        converged,
        iterations,
        trace,
    })
}
