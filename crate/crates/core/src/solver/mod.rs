//! Proximal Newton / block coordinate descent solver for the penalized
//! quasi-likelihood objective
//!
//!   f(Theta; delta) + g(Theta),
//!   f = -sum_i ql_i + (phi/2) * delta' Lambda^-1 delta,
//!   g = (1-rho)*lambda * sum_j ||(beta_j, gamma_j)||_2 + rho*lambda * sum_j |gamma_j|,
//!
//! minimized over the fixed effects Theta = (theta, alpha, beta, gamma) and
//! the rotated random effects delta = U'b. Each outer iteration freezes the
//! working weights w_i = 1/Delta_ii and the working response
//! Ytilde = eta + Delta*(y - mu), solves the delta ridge block by coordinate
//! descent, then cycles closed-form updates over the unpenalized
//! coordinates and the penalized groups. The step size is fixed at s_t = 1;
//! a divergence guard replaces line search.

mod delta;
mod group;
mod path;

pub use delta::{update_delta, update_delta_inplace};
pub use group::{group_kkt_residual, group_null_test, soft_threshold, update_group, GroupStats};
pub use path::{
    fit_path, lambda_max, strong_rule_filter, GridSpec, PathPoint, PathResult, RhoPath,
};

use nalgebra::{DMatrix, DVector};

use crate::data::{clamp_mu, quasi_loglik, Coefficients, Dataset, Family};
use crate::error::{Error, Result};
use crate::kinship::CovarianceEigen;
use crate::varcomp::NullModel;

pub const TOL_OUTER: f64 = 1e-6;
pub const TOL_CD: f64 = 1e-7;
pub const TOL_KKT: f64 = 1e-6;
pub const MAX_OUTER: usize = 100;
pub const MAX_INNER: usize = 1000;

/// Penalty configuration: overall strength lambda, GEI sparsity mix rho,
/// and optional per-group weights (weight 0 leaves a group unpenalized).
#[derive(Debug, Clone)]
pub struct PenaltySpec {
    pub lambda: f64,
    pub rho: f64,
    pub weights: Option<DVector<f64>>,
}

impl PenaltySpec {
    pub fn new(lambda: f64, rho: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
        }
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::InvalidArgument(format!("rho must lie in [0,1), got {rho}")));
        }
        Ok(PenaltySpec { lambda, rho, weights: None })
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[j])
    }
}

/// Solver tolerances and iteration caps.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Relative quasi-objective change declaring outer convergence.
    pub tol_outer: f64,
    /// Coordinate-descent per-cycle change tolerance.
    pub tol_cd: f64,
    /// KKT slack tolerance for screening back-checks.
    pub tol_kkt: f64,
    /// Largest total coefficient movement allowed in a converged outer
    /// iteration; guards against declaring convergence on a slow tail.
    pub tol_coef: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol_outer: TOL_OUTER,
            tol_cd: TOL_CD,
            tol_kkt: TOL_KKT,
            tol_coef: 1e-6,
            max_outer: MAX_OUTER,
            max_inner: MAX_INNER,
        }
    }
}

impl FitOptions {
    /// Tightened tolerances for reference comparisons.
    pub fn strict() -> Self {
        FitOptions {
            tol_outer: 1e-12,
            tol_cd: 1e-10,
            tol_kkt: 1e-8,
            tol_coef: 1e-9,
            max_outer: 500,
            max_inner: 20_000,
        }
    }
}

/// KKT diagnostics at the converged state, evaluated with working
/// quantities refreshed at the final coefficients.
#[derive(Debug, Clone, Copy)]
pub struct KktReport {
    /// min over zero groups of (1-rho)*lambda_j - sqrt(LHS of the null
    /// condition); negative values are violations. +inf when none.
    pub min_zero_slack: f64,
    /// max-norm of the subgradient stationarity residual over active groups.
    pub max_active_residual: f64,
    /// max stationarity residual over theta, alpha and delta coordinates.
    pub max_unpenalized_residual: f64,
}

impl KktReport {
    fn empty() -> Self {
        KktReport {
            min_zero_slack: f64::INFINITY,
            max_active_residual: 0.0,
            max_unpenalized_residual: 0.0,
        }
    }
}

/// Converged solver state for one (lambda, rho).
#[derive(Debug, Clone)]
pub struct FitState {
    pub coef: Coefficients,
    /// Rotated random effects delta = U'b.
    pub delta: DVector<f64>,
    pub mu: DVector<f64>,
    /// Working weights w_i = Delta_ii^{-1}.
    pub w: DVector<f64>,
    pub ytilde: DVector<f64>,
    /// Groups with a nonzero (beta_j, gamma_j) pair.
    pub active_set: Vec<usize>,
    pub s_t: f64,
    pub objective: f64,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub kkt: KktReport,
    pub warnings: Vec<String>,
}

/// Penalty value g(Theta).
pub fn penalty_value(coef: &Coefficients, penalty: &PenaltySpec) -> f64 {
    let mut acc = 0.0;
    for j in 0..coef.beta.len() {
        let wj = penalty.weight(j);
        acc += (1.0 - penalty.rho) * penalty.lambda * wj * coef.beta[j].hypot(coef.gamma[j]);
        acc += penalty.rho * penalty.lambda * wj * coef.gamma[j].abs();
    }
    acc
}

/// Smooth part f = -sum_i ql_i(mu) + (phi/2) * sum_j delta_j^2 / Lambda_j,
/// with ql at phi = 1 (negative Bernoulli log-likelihood for binomial,
/// squared-error/2 for gaussian).
pub fn smooth_objective(
    family: Family,
    y: &DVector<f64>,
    mu: &DVector<f64>,
    delta: &DVector<f64>,
    lambda_eigen: &DVector<f64>,
    phi: f64,
) -> f64 {
    let mut acc = 0.0;
    for i in 0..y.len() {
        acc -= quasi_loglik(family, y[i], mu[i]);
    }
    for j in 0..delta.len() {
        acc += 0.5 * phi * delta[j] * delta[j] / lambda_eigen[j];
    }
    acc
}

/// Full quasi-objective f + g used for convergence monitoring.
#[allow(clippy::too_many_arguments)]
pub fn quasi_objective(
    family: Family,
    y: &DVector<f64>,
    mu: &DVector<f64>,
    delta: &DVector<f64>,
    lambda_eigen: &DVector<f64>,
    phi: f64,
    coef: &Coefficients,
    penalty: &PenaltySpec,
) -> f64 {
    smooth_objective(family, y, mu, delta, lambda_eigen, phi) + penalty_value(coef, penalty)
}

/// One coordinate sweep over theta then alpha against the maintained
/// residual; returns the largest coefficient change. Columns with zero
/// weighted sum of squares are skipped.
#[allow(clippy::too_many_arguments)]
pub fn sweep_unpenalized(
    theta: &mut DVector<f64>,
    alpha: &mut f64,
    z: &DMatrix<f64>,
    d: &DVector<f64>,
    w: &DVector<f64>,
    sz2: &DVector<f64>,
    sd2: f64,
    resid: &mut DVector<f64>,
    skipped: &mut Vec<usize>,
) -> f64 {
    let n = resid.len();
    let m = theta.len();
    let zdata = z.as_slice();
    let ws = w.as_slice();
    let mut max_change: f64 = 0.0;
    for k in 0..m {
        if sz2[k] <= 1e-300 {
            if !skipped.contains(&k) {
                skipped.push(k);
            }
            continue;
        }
        let zk = &zdata[k * n..(k + 1) * n];
        let mut num = 0.0;
        for ((&zi, &wi), &ri) in zk.iter().zip(ws).zip(resid.iter()) {
            num += wi * zi * ri;
        }
        let new = theta[k] + num / sz2[k];
        let change = new - theta[k];
        if change != 0.0 {
            for (ri, &zi) in resid.iter_mut().zip(zk) {
                *ri -= zi * change;
            }
            theta[k] = new;
            max_change = max_change.max(change.abs());
        }
    }
    if sd2 > 1e-300 {
        let mut num = 0.0;
        for ((&di, &wi), &ri) in d.iter().zip(ws).zip(resid.iter()) {
            num += wi * di * ri;
        }
        let new = *alpha + num / sd2;
        let change = new - *alpha;
        if change != 0.0 {
            for (ri, &di) in resid.iter_mut().zip(d.iter()) {
                *ri -= di * change;
            }
            *alpha = new;
            max_change = max_change.max(change.abs());
        }
    }
    max_change
}

/// Repeated unpenalized sweeps until stationarity; equivalent to the WLS
/// solution when columns are linearly independent.
#[allow(clippy::too_many_arguments)]
pub fn update_unpenalized(
    theta: &mut DVector<f64>,
    alpha: &mut f64,
    z: &DMatrix<f64>,
    d: &DVector<f64>,
    w: &DVector<f64>,
    resid: &mut DVector<f64>,
    tol: f64,
    max_cycles: usize,
) -> usize {
    let n = resid.len();
    let sz2 = DVector::from_fn(z.ncols(), |k, _| {
        let zk = z.column(k);
        (0..n).map(|i| w[i] * zk[i] * zk[i]).sum::<f64>()
    });
    let sd2 = (0..n).map(|i| w[i] * d[i] * d[i]).sum::<f64>();
    let mut skipped = Vec::new();
    for cycle in 0..max_cycles {
        let change = sweep_unpenalized(theta, alpha, z, d, w, &sz2, sd2, resid, &mut skipped);
        if change < tol {
            return cycle + 1;
        }
    }
    max_cycles
}

struct Engine<'a> {
    ds: &'a Dataset,
    eigen: &'a CovarianceEigen,
    family: Family,
    phi: f64,
    /// phi / Lambda_j.
    ridge: DVector<f64>,
}

impl<'a> Engine<'a> {
    fn new(ds: &'a Dataset, eigen: &'a CovarianceEigen, null: &NullModel) -> Self {
        let ridge = DVector::from_fn(eigen.lambda.len(), |j, _| null.phi / eigen.lambda[j]);
        Engine { ds, eigen, family: null.family, phi: null.phi, ridge }
    }

    fn gcol(&self, j: usize) -> &[f64] {
        let n = self.ds.n_samples();
        &self.ds.g.as_slice()[j * n..(j + 1) * n]
    }

    /// Linear predictor eta = Z theta + alpha D + G beta + (D o G) gamma + U delta.
    fn eta(&self, coef: &Coefficients, delta_rot: &DVector<f64>) -> DVector<f64> {
        let mut eta = &self.ds.z * &coef.theta + &self.ds.d * coef.alpha;
        for j in 0..coef.beta.len() {
            let (bj, gj) = (coef.beta[j], coef.gamma[j]);
            if bj != 0.0 || gj != 0.0 {
                for ((ei, &gi), &di) in
                    eta.iter_mut().zip(self.gcol(j)).zip(self.ds.d.iter())
                {
                    *ei += gi * (bj + gj * di);
                }
            }
        }
        eta += &self.eigen.u * delta_rot;
        eta
    }

    /// Working quantities at the current iterate: mu, Delta diag, weights.
    fn working(&self, eta: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let n = eta.len();
        let mu = DVector::from_fn(n, |i, _| clamp_mu(self.family, self.family.inv_link(eta[i])));
        let dd = DVector::from_fn(n, |i, _| self.family.dlink(mu[i]));
        let w = DVector::from_fn(n, |i, _| 1.0 / dd[i]);
        (mu, dd, w)
    }

    fn objective(&self, coef: &Coefficients, delta_rot: &DVector<f64>, penalty: &PenaltySpec) -> f64 {
        let eta = self.eta(coef, delta_rot);
        let mu = DVector::from_fn(eta.len(), |i, _| {
            clamp_mu(self.family, self.family.inv_link(eta[i]))
        });
        quasi_objective(
            self.family,
            &self.ds.y,
            &mu,
            delta_rot,
            &self.eigen.lambda,
            self.phi,
            coef,
            penalty,
        )
    }

    fn group_cross_moments(&self, j: usize, w: &DVector<f64>) -> (f64, f64, f64) {
        let (mut sg, mut sdg, mut c0) = (0.0, 0.0, 0.0);
        for ((&gi, &wi), &di) in self.gcol(j).iter().zip(w.iter()).zip(self.ds.d.iter()) {
            let wg = wi * gi * gi;
            sg += wg;
            sdg += wg * di * di;
            c0 += wg * di;
        }
        (sg, sdg, c0)
    }

    fn group_residual_moments(&self, j: usize, w: &DVector<f64>, resid: &DVector<f64>) -> (f64, f64) {
        let (mut swgr, mut swdgr) = (0.0, 0.0);
        for (((&gi, &wi), &ri), &di) in self
            .gcol(j)
            .iter()
            .zip(w.iter())
            .zip(resid.iter())
            .zip(self.ds.d.iter())
        {
            let wr = wi * gi * ri;
            swgr += wr;
            swdgr += wr * di;
        }
        (swgr, swdgr)
    }

    /// KKT diagnostics with working quantities refreshed at the final state.
    fn kkt_report(
        &self,
        coef: &Coefficients,
        delta_rot: &DVector<f64>,
        penalty: &PenaltySpec,
        s_t: f64,
    ) -> KktReport {
        let n = self.ds.n_samples();
        let p = self.ds.n_variants();
        let eta = self.eta(coef, delta_rot);
        let (mu, dd, w) = self.working(&eta);
        let resid = DVector::from_fn(n, |i, _| dd[i] * (self.ds.y[i] - mu[i]));

        let mut report = KktReport::empty();
        for j in 0..p {
            let wj = penalty.weight(j);
            let lam1 = (1.0 - penalty.rho) * penalty.lambda * wj * s_t;
            let lam2 = penalty.rho * penalty.lambda * wj * s_t;
            let (swgr, swdgr) = self.group_residual_moments(j, &w, &resid);
            let (bj, gj) = (coef.beta[j], coef.gamma[j]);
            if bj == 0.0 && gj == 0.0 {
                let s = soft_threshold(swdgr, lam2);
                let slack = lam1 - swgr.hypot(s);
                report.min_zero_slack = report.min_zero_slack.min(slack);
            } else {
                let (sg, sdg, c0) = self.group_cross_moments(j, &w);
                // Full residual already excludes nothing; convert to the
                // leave-group-out moments expected by the residual formula.
                let a0 = swgr + sg * bj + c0 * gj;
                let b0 = swdgr + c0 * bj + sdg * gj;
                let stats = GroupStats { a0, b0, sg, sdg, c0 };
                let r = group_kkt_residual(&stats, lam1, lam2, bj, gj);
                report.max_active_residual = report.max_active_residual.max(r);
            }
        }
        // Unpenalized stationarity: theta, alpha and the delta ridge block.
        for k in 0..self.ds.n_covariates() {
            let zk = self.ds.z.column(k);
            let g: f64 = (0..n).map(|i| w[i] * zk[i] * resid[i]).sum();
            report.max_unpenalized_residual = report.max_unpenalized_residual.max(g.abs());
        }
        let ga: f64 = (0..n).map(|i| w[i] * self.ds.d[i] * resid[i]).sum();
        report.max_unpenalized_residual = report.max_unpenalized_residual.max(ga.abs());
        for j in 0..n {
            let uj = self.eigen.u.column(j);
            let g: f64 = (0..n).map(|i| w[i] * uj[i] * resid[i]).sum::<f64>()
                - self.ridge[j] * delta_rot[j];
            report.max_unpenalized_residual = report.max_unpenalized_residual.max(g.abs());
        }
        report
    }

    /// Core fit over a candidate group set; groups outside `candidates`
    /// stay at their warm-start values (zero unless the caller mis-specified
    /// the candidate set, which the union below prevents).
    fn fit(
        &self,
        penalty: &PenaltySpec,
        warm: Option<&FitState>,
        candidates: &[usize],
        opts: &FitOptions,
    ) -> Result<FitState> {
        let n = self.ds.n_samples();
        let m = self.ds.n_covariates();
        let p = self.ds.n_variants();
        let s_t = 1.0;

        let (mut coef, mut delta_rot) = match warm {
            Some(ws) => (ws.coef.clone(), ws.delta.clone()),
            None => (Coefficients::zeros(m, p), DVector::zeros(n)),
        };

        // Candidate list: requested groups plus any warm-start actives.
        let mut cand: Vec<usize> = candidates.to_vec();
        for j in 0..p {
            if (coef.beta[j] != 0.0 || coef.gamma[j] != 0.0) && !cand.contains(&j) {
                cand.push(j);
            }
        }
        cand.sort_unstable();
        cand.dedup();

        let mut warnings = Vec::new();
        let mut skipped = Vec::new();
        let mut obj_prev = self.objective(&coef, &delta_rot, penalty);
        let mut objective_trace = vec![obj_prev];
        let mut diverge_streak = 0usize;
        let mut converged = false;
        let mut iterations = 0;

        for _outer in 0..opts.max_outer {
            iterations += 1;
            let coef_start = coef.clone();
            let delta_start = delta_rot.clone();

            // Freeze working quantities at the current iterate.
            let mut eta = self.eta(&coef, &delta_rot);
            let (mu, dd, w) = self.working(&eta);
            let mut resid = DVector::from_fn(n, |i, _| dd[i] * (self.ds.y[i] - mu[i]));

            let su2 = DVector::from_fn(n, |j, _| {
                let uj = self.eigen.u.column(j);
                (0..n).map(|i| w[i] * uj[i] * uj[i]).sum::<f64>()
            });

            // Delta block.
            update_delta_inplace(
                &mut delta_rot,
                &mut resid,
                &self.eigen.u,
                &w,
                &su2,
                &self.ridge,
                opts.tol_cd,
                10_000,
            );

            // Refresh mu and the working response at the new delta, keeping
            // the weights from the outer-iteration start.
            eta = self.eta(&coef, &delta_rot);
            let mu2 = DVector::from_fn(n, |i, _| {
                clamp_mu(self.family, self.family.inv_link(eta[i]))
            });
            for i in 0..n {
                resid[i] = dd[i] * (self.ds.y[i] - mu2[i]);
            }

            // Theta block: unpenalized coordinates and candidate groups.
            let sz2 = DVector::from_fn(m, |k, _| {
                let zk = self.ds.z.column(k);
                (0..n).map(|i| w[i] * zk[i] * zk[i]).sum::<f64>()
            });
            let sd2 = (0..n).map(|i| w[i] * self.ds.d[i] * self.ds.d[i]).sum::<f64>();
            let moments: Vec<(f64, f64, f64)> =
                cand.iter().map(|&j| self.group_cross_moments(j, &w)).collect();

            let mut full_cycle = true;
            for _cycle in 0..opts.max_inner {
                let mut max_change = sweep_unpenalized(
                    &mut coef.theta,
                    &mut coef.alpha,
                    &self.ds.z,
                    &self.ds.d,
                    &w,
                    &sz2,
                    sd2,
                    &mut resid,
                    &mut skipped,
                );
                for (idx, &j) in cand.iter().enumerate() {
                    // Polish cycles visit only the currently nonzero groups;
                    // full cycles verify stationarity over every candidate.
                    if !full_cycle && coef.beta[j] == 0.0 && coef.gamma[j] == 0.0 {
                        continue;
                    }
                    let (sg, sdg, c0) = moments[idx];
                    let (swgr, swdgr) = self.group_residual_moments(j, &w, &resid);
                    let (bj, gj) = (coef.beta[j], coef.gamma[j]);
                    let stats = GroupStats {
                        a0: swgr + sg * bj + c0 * gj,
                        b0: swdgr + c0 * bj + sdg * gj,
                        sg,
                        sdg,
                        c0,
                    };
                    let wj = penalty.weight(j);
                    let lam1 = (1.0 - penalty.rho) * penalty.lambda * wj * s_t;
                    let lam2 = penalty.rho * penalty.lambda * wj * s_t;
                    let (bn, gn, _) =
                        update_group(&stats, lam1, lam2, bj, gj, opts.tol_cd, opts.max_inner)?;
                    if bn != bj || gn != gj {
                        let db = bn - bj;
                        let dg = gn - gj;
                        for ((ri, &gi), &di) in
                            resid.iter_mut().zip(self.gcol(j)).zip(self.ds.d.iter())
                        {
                            *ri -= gi * (db + dg * di);
                        }
                        coef.beta[j] = bn;
                        coef.gamma[j] = gn;
                        max_change = max_change.max(db.abs()).max(dg.abs());
                    }
                }
                if full_cycle {
                    if max_change < opts.tol_cd {
                        break;
                    }
                    full_cycle = false;
                } else if max_change < opts.tol_cd {
                    full_cycle = true;
                }
            }

            // Convergence bookkeeping on the fresh objective.
            let obj = self.objective(&coef, &delta_rot, penalty);
            objective_trace.push(obj);
            if obj > 1.1 * obj_prev + 1e-12 {
                diverge_streak += 1;
                if diverge_streak >= 3 {
                    return Err(Error::Numerical(format!(
                        "objective diverged for 3 consecutive outer iterations \
                         (last {obj:.6e} vs {obj_prev:.6e}); consider starting from a larger \
                         lambda or a smaller grid step"
                    )));
                }
            } else {
                diverge_streak = 0;
            }
            let rel = (obj - obj_prev).abs() / obj_prev.abs().max(1e-10);
            let mut movement = (&coef.theta - &coef_start.theta).abs().max();
            movement = movement.max((coef.alpha - coef_start.alpha).abs());
            movement = movement.max((&coef.beta - &coef_start.beta).abs().max());
            movement = movement.max((&coef.gamma - &coef_start.gamma).abs().max());
            movement = movement.max((&delta_rot - &delta_start).abs().max());
            obj_prev = obj;
            if rel < opts.tol_outer && movement < opts.tol_coef {
                converged = true;
                break;
            }
        }

        if !skipped.is_empty() {
            warnings.push(format!(
                "unpenalized columns with zero weighted sum of squares skipped: {skipped:?}"
            ));
        }

        // Canonical refresh of the stored working quantities at the final
        // coefficients; prediction and KKT checks both start from these.
        let eta = self.eta(&coef, &delta_rot);
        let (mu, dd, w) = self.working(&eta);
        let ytilde = DVector::from_fn(n, |i, _| eta[i] + dd[i] * (self.ds.y[i] - mu[i]));
        let kkt = self.kkt_report(&coef, &delta_rot, penalty, s_t);
        let active_set: Vec<usize> = (0..p)
            .filter(|&j| coef.beta[j] != 0.0 || coef.gamma[j] != 0.0)
            .collect();

        Ok(FitState {
            coef,
            delta: delta_rot,
            mu,
            w,
            ytilde,
            active_set,
            s_t,
            objective: obj_prev,
            objective_trace,
            iterations,
            converged,
            kkt,
            warnings,
        })
    }
}

/// Linear predictor eta = Z theta + alpha D + G beta + (D o G) gamma + U delta.
pub fn linear_predictor(
    ds: &Dataset,
    eigen: &CovarianceEigen,
    coef: &Coefficients,
    delta_rot: &DVector<f64>,
) -> DVector<f64> {
    let n = ds.n_samples();
    let mut eta = &ds.z * &coef.theta + &ds.d * coef.alpha;
    for j in 0..coef.beta.len() {
        let (bj, gj) = (coef.beta[j], coef.gamma[j]);
        if bj != 0.0 || gj != 0.0 {
            let gcol = ds.g.column(j);
            for i in 0..n {
                eta[i] += gcol[i] * (bj + gj * ds.d[i]);
            }
        }
    }
    eta += &eigen.u * delta_rot;
    eta
}

/// Canonical working quantities (mu, w, Ytilde) at given coefficients; the
/// same refresh the solver stores at convergence.
pub fn working_state(
    ds: &Dataset,
    eigen: &CovarianceEigen,
    family: Family,
    coef: &Coefficients,
    delta_rot: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let n = ds.n_samples();
    let eta = linear_predictor(ds, eigen, coef, delta_rot);
    let mu = DVector::from_fn(n, |i, _| clamp_mu(family, family.inv_link(eta[i])));
    let dd = DVector::from_fn(n, |i, _| family.dlink(mu[i]));
    let w = DVector::from_fn(n, |i, _| 1.0 / dd[i]);
    let ytilde = DVector::from_fn(n, |i, _| eta[i] + dd[i] * (ds.y[i] - mu[i]));
    (mu, w, ytilde)
}

/// Fit one (lambda, rho) point sweeping every group.
pub fn fit_single(
    ds: &Dataset,
    eigen: &CovarianceEigen,
    null: &NullModel,
    penalty: &PenaltySpec,
    warm: Option<&FitState>,
    opts: &FitOptions,
) -> Result<FitState> {
    let engine = Engine::new(ds, eigen, null);
    let all: Vec<usize> = (0..ds.n_variants()).collect();
    engine.fit(penalty, warm, &all, opts)
}

/// Fit restricted to a candidate set; used by the path driver together with
/// the strong-rule screen and KKT back-checks.
pub fn fit_with_candidates(
    ds: &Dataset,
    eigen: &CovarianceEigen,
    null: &NullModel,
    penalty: &PenaltySpec,
    warm: Option<&FitState>,
    candidates: &[usize],
    opts: &FitOptions,
) -> Result<FitState> {
    Engine::new(ds, eigen, null).fit(penalty, warm, candidates, opts)
}

/// Polish the null PQL fixed point (beta = gamma = 0): theta, alpha and
/// delta only, iterated tightly. Used for lambda_max, warm starts and the
/// full-shrinkage reference.
pub fn fit_null_state(
    ds: &Dataset,
    eigen: &CovarianceEigen,
    null: &NullModel,
) -> Result<FitState> {
    let engine = Engine::new(ds, eigen, null);
    let mut warm = FitState {
        coef: Coefficients::zeros(ds.n_covariates(), ds.n_variants()),
        delta: DVector::zeros(ds.n_samples()),
        mu: DVector::zeros(ds.n_samples()),
        w: DVector::zeros(ds.n_samples()),
        ytilde: DVector::zeros(ds.n_samples()),
        active_set: Vec::new(),
        s_t: 1.0,
        objective: 0.0,
        objective_trace: Vec::new(),
        iterations: 0,
        converged: false,
        kkt: KktReport::empty(),
        warnings: Vec::new(),
    };
    warm.coef.theta.copy_from(&null.theta0);
    warm.coef.alpha = null.alpha0;
    // Huge lambda: every group passes the null test, so only the
    // unpenalized blocks move.
    let penalty = PenaltySpec::new(f64::MAX / 4.0, 0.0)?;
    let opts = FitOptions {
        tol_outer: 1e-13,
        tol_cd: 1e-11,
        tol_coef: 1e-10,
        max_outer: 1000,
        ..FitOptions::default()
    };
    engine.fit(&penalty, Some(&warm), &[], &opts)
}
