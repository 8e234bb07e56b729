//! Regularization-path driver: per-rho lambda grids anchored at lambda_max,
//! warm starts, sequential strong-rule screening and exact KKT back-checks.

use nalgebra::DVector;

use crate::data::{Coefficients, Dataset, Family};
use crate::error::{Error, Result};
use crate::kinship::CovarianceEigen;
use crate::varcomp::NullModel;

use super::{
    fit_null_state, fit_with_candidates, soft_threshold, FitOptions, FitState, PenaltySpec,
};

/// Grid configuration for [`fit_path`].
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub n_lambda: usize,
    /// lambda_min / lambda_max; `None` picks 0.01 when p >= n, 0.0001 otherwise.
    pub lambda_min_ratio: Option<f64>,
    pub rho_grid: Vec<f64>,
    /// Explicit per-rho lambda grids (parallel to `rho_grid`); overrides the
    /// geometric construction. Used by cross-validation to share one grid
    /// across folds.
    pub lambdas: Option<Vec<Vec<f64>>>,
    pub use_strong_rule: bool,
    pub penalty_weights: Option<DVector<f64>>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            n_lambda: 100,
            lambda_min_ratio: None,
            rho_grid: vec![0.0, 0.5],
            lambdas: None,
            use_strong_rule: true,
            penalty_weights: None,
        }
    }
}

impl GridSpec {
    pub fn min_ratio(&self, n: usize, p: usize) -> f64 {
        self.lambda_min_ratio.unwrap_or(if p < n { 1e-4 } else { 0.01 })
    }

    pub fn geometric(&self, lambda_max: f64, n: usize, p: usize) -> Vec<f64> {
        let k = self.n_lambda.max(1);
        if k == 1 {
            return vec![lambda_max];
        }
        let ratio = self.min_ratio(n, p);
        (0..k)
            .map(|i| lambda_max * ratio.powf(i as f64 / (k - 1) as f64))
            .collect()
    }
}

/// One fitted grid point.
#[derive(Debug, Clone)]
pub struct PathPoint {
    pub lambda: f64,
    pub rho: f64,
    pub coef: Coefficients,
    pub delta: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub n_active: usize,
    /// Groups discarded by the strong rule before fitting this point.
    pub n_screened: usize,
    /// Refit rounds forced by KKT violations among screened groups.
    pub kkt_refit_rounds: usize,
    pub min_zero_slack: f64,
    pub max_active_residual: f64,
    pub error: Option<String>,
}

/// The solution path for one rho value.
#[derive(Debug, Clone)]
pub struct RhoPath {
    pub rho: f64,
    pub lambda_max: f64,
    pub lambdas: Vec<f64>,
    pub points: Vec<PathPoint>,
}

/// All (lambda, rho) solutions plus the polished null state they grew from.
#[derive(Debug, Clone)]
pub struct PathResult {
    pub family: Family,
    pub rho_paths: Vec<RhoPath>,
    pub null_state: FitState,
}

impl PathResult {
    /// Count of hierarchy breaches (gamma_j != 0 with beta_j = 0) over every
    /// fitted point.
    pub fn hierarchy_violations(&self) -> usize {
        self.rho_paths
            .iter()
            .flat_map(|rp| rp.points.iter())
            .map(|pt| {
                (0..pt.coef.beta.len())
                    .filter(|&j| pt.coef.gamma[j] != 0.0 && pt.coef.beta[j] == 0.0)
                    .count()
            })
            .sum()
    }
}

/// Working residual Delta * (y - mu) reconstructed from a state's stored
/// mean and weights.
fn working_residual(ds: &Dataset, state: &FitState) -> DVector<f64> {
    DVector::from_fn(ds.n_samples(), |i, _| (ds.y[i] - state.mu[i]) / state.w[i])
}

/// Per-group weighted score pair (a_j, b_j) against a working residual.
fn group_scores(ds: &Dataset, w: &DVector<f64>, resid: &DVector<f64>, j: usize) -> (f64, f64) {
    let gcol = ds.g.column(j);
    let (mut a, mut b) = (0.0, 0.0);
    for i in 0..ds.n_samples() {
        let t = w[i] * gcol[i] * resid[i];
        a += t;
        b += t * ds.d[i];
    }
    (a, b)
}

/// Smallest lambda at which every group passes the group-null test at the
/// null fit. Returned as the upper bisection bracket so the test is
/// guaranteed to pass at the returned value.
pub fn lambda_max(
    ds: &Dataset,
    null_state: &FitState,
    rho: f64,
    weights: Option<&DVector<f64>>,
) -> f64 {
    let resid = working_residual(ds, null_state);
    let mut lmax: f64 = 0.0;
    for j in 0..ds.n_variants() {
        let wj = weights.map_or(1.0, |w| w[j]);
        if wj <= 0.0 {
            continue; // unpenalized group, active at every lambda
        }
        let (a, b) = group_scores(ds, &null_state.w, &resid, j);
        let feasible = |lam: f64| {
            let l1 = (1.0 - rho) * lam * wj;
            let l2 = rho * lam * wj;
            a.hypot(soft_threshold(b, l2)) <= l1
        };
        let crit = if rho == 0.0 {
            a.hypot(b) / wj
        } else {
            let mut hi = a.hypot(b).max(1e-300) / ((1.0 - rho) * wj);
            while !feasible(hi) {
                hi *= 2.0;
            }
            let mut lo = 0.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if feasible(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            hi
        };
        lmax = lmax.max(crit);
    }
    if lmax > 0.0 {
        lmax
    } else {
        1.0
    }
}

/// Sequential strong rule: indices surviving the screen at lambda given the
/// previous solution's mean. Discards group j when
/// sqrt((G_j'(y-mu))^2 + S_{rho*lambda_prev*w_j}((D o G_j)'(y-mu))^2)
///   <= (1-rho) * w_j * (2*lambda - lambda_prev).
pub fn strong_rule_filter(
    ds: &Dataset,
    mu_prev: &DVector<f64>,
    lambda_prev: f64,
    lambda: f64,
    rho: f64,
    weights: Option<&DVector<f64>>,
) -> Vec<usize> {
    let n = ds.n_samples();
    let score = DVector::from_fn(n, |i, _| ds.y[i] - mu_prev[i]);
    let mut survivors = Vec::new();
    for j in 0..ds.n_variants() {
        let wj = weights.map_or(1.0, |w| w[j]);
        let gcol = ds.g.column(j);
        let (mut a, mut b) = (0.0, 0.0);
        for i in 0..n {
            let t = gcol[i] * score[i];
            a += t;
            b += t * ds.d[i];
        }
        let lhs = a.hypot(soft_threshold(b, rho * lambda_prev * wj));
        let rhs = (1.0 - rho) * wj * (2.0 * lambda - lambda_prev);
        if lhs > rhs {
            survivors.push(j);
        }
    }
    survivors
}

/// Zero groups violating the weighted null condition at a fitted state,
/// beyond `tol` slack.
fn zero_group_violations(
    ds: &Dataset,
    state: &FitState,
    penalty: &PenaltySpec,
    tol: f64,
) -> Vec<usize> {
    let resid = working_residual(ds, state);
    let mut out = Vec::new();
    for j in 0..ds.n_variants() {
        if state.coef.beta[j] != 0.0 || state.coef.gamma[j] != 0.0 {
            continue;
        }
        let wj = penalty.weight(j);
        let lam1 = (1.0 - penalty.rho) * penalty.lambda * wj * state.s_t;
        let lam2 = penalty.rho * penalty.lambda * wj * state.s_t;
        let (a, b) = group_scores(ds, &state.w, &resid, j);
        if lam1 - a.hypot(soft_threshold(b, lam2)) < -tol {
            out.push(j);
        }
    }
    out
}

const MAX_KKT_ROUNDS: usize = 10;

/// Fit the full (lambda, rho) grid with warm starts along each lambda path.
pub fn fit_path(
    ds: &Dataset,
    eigen: &CovarianceEigen,
    null: &NullModel,
    grid: &GridSpec,
    opts: &FitOptions,
) -> Result<PathResult> {
    if grid.rho_grid.is_empty() {
        return Err(Error::InvalidArgument("rho grid is empty".into()));
    }
    if let Some(ls) = &grid.lambdas {
        if ls.len() != grid.rho_grid.len() {
            return Err(Error::InvalidArgument(
                "explicit lambda grids must parallel the rho grid".into(),
            ));
        }
    }
    let (n, p) = (ds.n_samples(), ds.n_variants());
    let null_state = fit_null_state(ds, eigen, null)?;
    let weights = grid.penalty_weights.as_ref();

    let mut rho_paths = Vec::with_capacity(grid.rho_grid.len());
    for (ri, &rho) in grid.rho_grid.iter().enumerate() {
        let lmax = lambda_max(ds, &null_state, rho, weights);
        let lambdas = match &grid.lambdas {
            Some(ls) => ls[ri].clone(),
            None => grid.geometric(lmax, n, p),
        };
        let mut points: Vec<PathPoint> = Vec::with_capacity(lambdas.len());
        let mut prev = null_state.clone();
        let mut ever_active: Vec<usize> = Vec::new();
        let mut lambda_prev = lambdas.first().copied().unwrap_or(lmax);

        for &lam in &lambdas {
            let mut penalty = PenaltySpec::new(lam, rho)?;
            penalty.weights = weights.cloned();
            let mut candidates: Vec<usize> = if grid.use_strong_rule {
                let mut c = strong_rule_filter(ds, &prev.mu, lambda_prev, lam, rho, weights);
                for &j in &ever_active {
                    if !c.contains(&j) {
                        c.push(j);
                    }
                }
                c.sort_unstable();
                c
            } else {
                (0..p).collect()
            };
            let n_screened = p - candidates.len();

            let mut rounds = 0;
            let outcome = loop {
                match fit_with_candidates(ds, eigen, null, &penalty, Some(&prev), &candidates, opts)
                {
                    Ok(fit) => {
                        let viol = zero_group_violations(ds, &fit, &penalty, opts.tol_kkt);
                        let new: Vec<usize> = viol
                            .into_iter()
                            .filter(|j| !candidates.contains(j))
                            .collect();
                        if new.is_empty() || rounds >= MAX_KKT_ROUNDS {
                            break Ok(fit);
                        }
                        candidates.extend(new);
                        candidates.sort_unstable();
                        rounds += 1;
                    }
                    Err(e) => break Err(e),
                }
            };

            match outcome {
                Ok(fit) => {
                    for &j in &fit.active_set {
                        if !ever_active.contains(&j) {
                            ever_active.push(j);
                        }
                    }
                    points.push(PathPoint {
                        lambda: lam,
                        rho,
                        coef: fit.coef.clone(),
                        delta: fit.delta.clone(),
                        objective: fit.objective,
                        iterations: fit.iterations,
                        converged: fit.converged,
                        n_active: fit.active_set.len(),
                        n_screened,
                        kkt_refit_rounds: rounds,
                        min_zero_slack: fit.kkt.min_zero_slack,
                        max_active_residual: fit.kkt.max_active_residual,
                        error: None,
                    });
                    prev = fit;
                }
                Err(e) => {
                    points.push(PathPoint {
                        lambda: lam,
                        rho,
                        coef: Coefficients::zeros(ds.n_covariates(), p),
                        delta: DVector::zeros(n),
                        objective: f64::NAN,
                        iterations: 0,
                        converged: false,
                        n_active: 0,
                        n_screened,
                        kkt_refit_rounds: rounds,
                        min_zero_slack: f64::NAN,
                        max_active_residual: f64::NAN,
                        error: Some(e.to_string()),
                    });
                }
            }
            lambda_prev = lam;
        }
        rho_paths.push(RhoPath { rho, lambda_max: lmax, lambdas, points });
    }
    Ok(PathResult { family: null.family, rho_paths, null_state })
}
