//! k-fold cross-validation over the (lambda, rho) grid and out-of-sample
//! prediction through the mixed-model conditional expectation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{clamp_mu, Coefficients, Dataset, Family, FamilyLink};
use crate::error::{Error, Result};
use crate::kinship::{eigendecompose, KinshipPair};
use crate::solver::{fit_path, linear_predictor, working_state, FitOptions, GridSpec, PathPoint};
use crate::varcomp::{fit_null_aireml, NullModel, VcOptions};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Fixed-effect part of the linear predictor for an arbitrary design.
pub fn fixed_effect_predictor(
    z: &DMatrix<f64>,
    d: &DVector<f64>,
    g: &DMatrix<f64>,
    coef: &Coefficients,
) -> DVector<f64> {
    let n = z.nrows();
    let mut eta = z * &coef.theta + d * coef.alpha;
    for j in 0..coef.beta.len() {
        let (bj, gj) = (coef.beta[j], coef.gamma[j]);
        if bj != 0.0 || gj != 0.0 {
            let gcol = g.column(j);
            for i in 0..n {
                eta[i] += gcol[i] * (bj + gj * d[i]);
            }
        }
    }
    eta
}

/// Conditional-expectation prediction for test individuals:
/// mu_s = g^-1( X_s Theta + Sigma_12 Sigma_22^-1 (Ytilde - X Theta) )
/// with Sigma_12 = tau_g K_12 + tau_d K^D_12 and
/// Sigma_22 = W^-1 + tau_g K_22 + tau_d K^D_22, W^-1 = phi * diag(1/w).
///
/// The Sigma_22 system is solved by one symmetric factorization; a singular
/// matrix triggers an escalating ridge repair reported in the returned flag.
#[allow(clippy::too_many_arguments)]
pub fn predict(
    family: Family,
    tau_g: f64,
    tau_d: f64,
    phi: f64,
    w_train: &DVector<f64>,
    ytilde_train: &DVector<f64>,
    xtheta_train: &DVector<f64>,
    xtheta_test: &DVector<f64>,
    k12: &DMatrix<f64>,
    kd12: &DMatrix<f64>,
    k22: &DMatrix<f64>,
    kd22: &DMatrix<f64>,
) -> Result<(DVector<f64>, bool)> {
    let n_s = xtheta_test.len();
    if tau_g == 0.0 && tau_d == 0.0 {
        // No random-effect covariance: the GLM linear predictor, exactly.
        return Ok((DVector::from_fn(n_s, |i, _| family.inv_link(xtheta_test[i])), false));
    }
    let n = ytilde_train.len();
    let resid = ytilde_train - xtheta_train;
    let mut sigma22 = k22 * tau_g + kd22 * tau_d;
    for i in 0..n {
        sigma22[(i, i)] += phi / w_train[i];
    }
    let mut repaired = false;
    let mean_diag = (0..n).map(|i| sigma22[(i, i)]).sum::<f64>() / n as f64;
    let mut ridge = 0.0;
    let solved = loop {
        let mut trial = sigma22.clone();
        if ridge > 0.0 {
            for i in 0..n {
                trial[(i, i)] += ridge;
            }
        }
        match trial.cholesky() {
            Some(chol) => break chol.solve(&resid),
            None => {
                repaired = true;
                ridge = if ridge == 0.0 { 1e-10 * mean_diag.max(1e-12) } else { ridge * 10.0 };
                if ridge > mean_diag.max(1.0) {
                    return Err(Error::Numerical(
                        "prediction covariance could not be repaired".into(),
                    ));
                }
            }
        }
    };
    let sigma12 = k12 * tau_g + kd12 * tau_d;
    let cond = &sigma12 * solved;
    let scores = DVector::from_fn(n_s, |i, _| family.inv_link(xtheta_test[i] + cond[i]));
    Ok((scores, repaired))
}

/// Area under the ROC curve via the Mann-Whitney rank statistic; ties count
/// one half. Errors when only one class is present.
pub fn auc(scores: &DVector<f64>, labels: &DVector<f64>) -> Result<f64> {
    let n = scores.len();
    let n_pos = labels.iter().filter(|&&y| y == 1.0).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data("AUC requires both classes present".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // Average ranks over tied score runs.
    let mut rank = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for t in i..=j {
            rank[idx[t]] = avg;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 =
        (0..n).filter(|&i| labels[i] == 1.0).map(|i| rank[i]).sum();
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Validation loss: -2 * log-likelihood for binomial (with the solver's mu
/// clamping), residual sum of squares for gaussian.
pub fn deviance(scores: &DVector<f64>, labels: &DVector<f64>, family: Family) -> f64 {
    match family {
        Family::Binomial => {
            let mut acc = 0.0;
            for i in 0..scores.len() {
                let mu = clamp_mu(family, scores[i]);
                acc -= 2.0 * (labels[i] * mu.ln() + (1.0 - labels[i]) * (1.0 - mu).ln());
            }
            acc
        }
        Family::Gaussian => (labels - scores).norm_squared(),
    }
}

/// Cross-validation summary over the grid.
#[derive(Debug, Clone)]
pub struct CVResult {
    pub rho_grid: Vec<f64>,
    /// Shared lambda grid per rho (descending).
    pub lambdas: Vec<Vec<f64>>,
    pub mean_deviance: Vec<Vec<f64>>,
    pub se_deviance: Vec<Vec<f64>>,
    pub mean_auc: Vec<Vec<f64>>,
    pub se_auc: Vec<Vec<f64>>,
    /// Fold id per sample.
    pub fold_assignment: Vec<usize>,
    /// (rho index, lambda index) minimizing mean validation deviance.
    pub chosen_min: (usize, usize),
    /// Largest lambda within one SE of the minimum, on the chosen rho path.
    pub chosen_1se: (usize, usize),
    /// Hierarchy breaches observed across all fold paths.
    pub hierarchy_violations: usize,
}

impl CVResult {
    pub fn chosen_lambda(&self) -> f64 {
        self.lambdas[self.chosen_min.0][self.chosen_min.1]
    }
    pub fn chosen_rho(&self) -> f64 {
        self.rho_grid[self.chosen_min.0]
    }
}

/// Stratified (binomial) or plain shuffled fold assignment.
pub fn assign_folds(y: &DVector<f64>, family: Family, k: usize, seed: u64) -> Vec<usize> {
    let n = y.len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut folds = vec![0usize; n];
    match family {
        Family::Binomial => {
            // Round-robin continues across classes so k = n yields exact
            // leave-one-out while class balance per fold is preserved.
            let mut next = 0usize;
            for class in [0.0, 1.0] {
                let mut members: Vec<usize> =
                    (0..n).filter(|&i| y[i] == class).collect();
                members.shuffle(&mut rng);
                for &i in &members {
                    folds[i] = next % k;
                    next += 1;
                }
            }
        }
        Family::Gaussian => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            for (pos, &i) in order.iter().enumerate() {
                folds[i] = pos % k;
            }
        }
    }
    folds
}

struct FoldScores {
    deviance: Vec<Vec<f64>>,
    auc: Vec<Vec<f64>>,
    hierarchy_violations: usize,
}

fn subset_dataset(ds: &Dataset, rows: &[usize]) -> Dataset {
    Dataset {
        y: DVector::from_fn(rows.len(), |i, _| ds.y[rows[i]]),
        z: ds.z.select_rows(rows),
        d: DVector::from_fn(rows.len(), |i, _| ds.d[rows[i]]),
        g: ds.g.select_rows(rows),
        sample_ids: rows.iter().map(|&i| ds.sample_ids[i].clone()).collect(),
        variant_ids: ds.variant_ids.clone(),
    }
}

/// k-fold cross-validation: refit the null model and eigendecomposition on
/// the training rows of each fold, fit the path on a grid shared across
/// folds, and score validation rows with [`predict`].
#[allow(clippy::too_many_arguments)]
pub fn kfold_cv(
    ds: &Dataset,
    kin: &KinshipPair,
    family: &FamilyLink,
    grid: &GridSpec,
    k: usize,
    seed: u64,
    folds_override: Option<Vec<usize>>,
    vc_opts: &VcOptions,
    fit_opts: &FitOptions,
) -> Result<CVResult> {
    let n = ds.n_samples();
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!("need 2 <= k <= n, got k = {k}")));
    }
    let folds = match folds_override {
        Some(f) => {
            if f.len() != n || f.iter().any(|&fi| fi >= k) {
                return Err(Error::InvalidArgument("invalid explicit fold assignment".into()));
            }
            f
        }
        None => assign_folds(&ds.y, family.family, k, seed),
    };

    // Per-fold training structures and null fits (needed before the master
    // grid, whose top point must shrink every fold to the null model).
    struct FoldPrep {
        train: Vec<usize>,
        valid: Vec<usize>,
        ds_train: Dataset,
        kin_train: KinshipPair,
        null: NullModel,
        null_state: crate::solver::FitState,
        eigen: crate::kinship::CovarianceEigen,
    }
    let preps: Vec<Result<FoldPrep>> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let train: Vec<usize> = (0..n).filter(|&i| folds[i] != fold).collect();
            let valid: Vec<usize> = (0..n).filter(|&i| folds[i] == fold).collect();
            let ds_train = subset_dataset(ds, &train);
            if family.family == Family::Binomial {
                let s: f64 = ds_train.y.sum();
                if s == 0.0 || s == ds_train.y.len() as f64 {
                    return Err(Error::Data(format!(
                        "fold {fold}: training response is constant"
                    )));
                }
            } else {
                let first = ds_train.y[0];
                if ds_train.y.iter().all(|&v| v == first) {
                    return Err(Error::Data(format!(
                        "fold {fold}: training response is constant"
                    )));
                }
            }
            let kin_train = kin.sub_block(&train);
            let null = fit_null_aireml(&ds_train, &kin_train, family, vc_opts)?;
            let eigen =
                eigendecompose(&kin_train.k, &kin_train.kd, null.tau_g, null.tau_d, true)?;
            let null_state = crate::solver::fit_null_state(&ds_train, &eigen, &null)?;
            Ok(FoldPrep { train, valid, ds_train, kin_train, null, null_state, eigen })
        })
        .collect();
    let mut prepped = Vec::with_capacity(k);
    for p in preps {
        prepped.push(p?);
    }

    // Master lambda grid per rho: anchored at the largest fold lambda_max so
    // the top grid point is the null model in every fold.
    let mut lambdas: Vec<Vec<f64>> = Vec::with_capacity(grid.rho_grid.len());
    for (ri, &rho) in grid.rho_grid.iter().enumerate() {
        if let Some(ls) = &grid.lambdas {
            lambdas.push(ls[ri].clone());
            continue;
        }
        let lmax = prepped
            .iter()
            .map(|p| {
                crate::solver::lambda_max(
                    &p.ds_train,
                    &p.null_state,
                    rho,
                    grid.penalty_weights.as_ref(),
                )
            })
            .fold(0.0f64, f64::max);
        lambdas.push(grid.geometric(lmax, ds.n_samples(), ds.n_variants()));
    }

    // Fit paths per fold and score the held-out rows.
    let fold_scores: Vec<Result<FoldScores>> = prepped
        .par_iter()
        .map(|prep| {
            let mut fold_grid = grid.clone();
            fold_grid.lambdas = Some(lambdas.clone());
            let path =
                fit_path(&prep.ds_train, &prep.eigen, &prep.null, &fold_grid, fit_opts)?;
            let (k12, kd12) = kin.cross_block(&prep.valid, &prep.train);
            let ds_valid = subset_dataset(ds, &prep.valid);
            let y_valid = ds_valid.y.clone();
            let mut dev = Vec::with_capacity(path.rho_paths.len());
            let mut aucs = Vec::with_capacity(path.rho_paths.len());
            for rp in &path.rho_paths {
                let mut dev_r = Vec::with_capacity(rp.points.len());
                let mut auc_r = Vec::with_capacity(rp.points.len());
                for pt in &rp.points {
                    if pt.error.is_some() {
                        dev_r.push(f64::NAN);
                        auc_r.push(f64::NAN);
                        continue;
                    }
                    let scores = score_point(
                        &prep.ds_train,
                        &prep.eigen,
                        &prep.kin_train,
                        &prep.null,
                        pt,
                        &ds_valid,
                        &k12,
                        &kd12,
                    )?;
                    dev_r.push(deviance(&scores, &y_valid, family.family));
                    auc_r.push(match family.family {
                        Family::Binomial => auc(&scores, &y_valid).unwrap_or(f64::NAN),
                        Family::Gaussian => f64::NAN,
                    });
                }
                dev.push(dev_r);
                aucs.push(auc_r);
            }
            Ok(FoldScores {
                deviance: dev,
                auc: aucs,
                hierarchy_violations: path.hierarchy_violations(),
            })
        })
        .collect();
    let mut scores = Vec::with_capacity(k);
    for s in fold_scores {
        scores.push(s?);
    }

    // Aggregate per grid point.
    let nr = grid.rho_grid.len();
    let mut mean_deviance = Vec::with_capacity(nr);
    let mut se_deviance = Vec::with_capacity(nr);
    let mut mean_auc = Vec::with_capacity(nr);
    let mut se_auc = Vec::with_capacity(nr);
    for ri in 0..nr {
        let nl = lambdas[ri].len();
        let mut md = vec![f64::NAN; nl];
        let mut sd = vec![f64::NAN; nl];
        let mut ma = vec![f64::NAN; nl];
        let mut sa = vec![f64::NAN; nl];
        for li in 0..nl {
            let devs: Vec<f64> = scores.iter().map(|s| s.deviance[ri][li]).collect();
            if devs.iter().all(|v| v.is_finite()) {
                let (m, s) = mean_se(&devs);
                md[li] = m;
                sd[li] = s;
            }
            let aucs: Vec<f64> =
                scores.iter().map(|s| s.auc[ri][li]).filter(|v| v.is_finite()).collect();
            if !aucs.is_empty() {
                let (m, s) = mean_se(&aucs);
                ma[li] = m;
                sa[li] = s;
            }
        }
        mean_deviance.push(md);
        se_deviance.push(sd);
        mean_auc.push(ma);
        se_auc.push(sa);
    }

    // Selection: minimum mean deviance, then the 1-SE variant on the same
    // rho path (largest lambda within one SE of the minimum).
    let mut chosen_min = (0usize, 0usize);
    let mut best = f64::INFINITY;
    for ri in 0..nr {
        for (li, &m) in mean_deviance[ri].iter().enumerate() {
            if m.is_finite() && m < best {
                best = m;
                chosen_min = (ri, li);
            }
        }
    }
    let (ri, li) = chosen_min;
    let threshold = best + se_deviance[ri][li];
    let mut chosen_1se = chosen_min;
    for cand in 0..=li {
        let m = mean_deviance[ri][cand];
        if m.is_finite() && m <= threshold {
            chosen_1se = (ri, cand);
            break;
        }
    }

    let hierarchy_violations = scores.iter().map(|s| s.hierarchy_violations).sum();
    Ok(CVResult {
        rho_grid: grid.rho_grid.clone(),
        lambdas,
        mean_deviance,
        se_deviance,
        mean_auc,
        se_auc,
        fold_assignment: folds,
        chosen_min,
        chosen_1se,
        hierarchy_violations,
    })
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Score one fitted path point on validation rows.
#[allow(clippy::too_many_arguments)]
pub fn score_point(
    ds_train: &Dataset,
    eigen: &crate::kinship::CovarianceEigen,
    kin_train: &KinshipPair,
    null: &NullModel,
    pt: &PathPoint,
    ds_valid: &Dataset,
    k12: &DMatrix<f64>,
    kd12: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let (_, w, ytilde) = working_state(ds_train, eigen, null.family, &pt.coef, &pt.delta);
    let xtheta_train =
        fixed_effect_predictor(&ds_train.z, &ds_train.d, &ds_train.g, &pt.coef);
    let xtheta_test = fixed_effect_predictor(&ds_valid.z, &ds_valid.d, &ds_valid.g, &pt.coef);
    let (scores, _) = predict(
        null.family,
        null.tau_g,
        null.tau_d,
        null.phi,
        &w,
        &ytilde,
        &xtheta_train,
        &xtheta_test,
        k12,
        kd12,
        &kin_train.k,
        &kin_train.kd,
    )?;
    Ok(scores)
}

/// Training-set linear predictor split used by [`predict`] callers.
pub fn train_fixed_part(
    ds: &Dataset,
    eigen: &crate::kinship::CovarianceEigen,
    coef: &Coefficients,
    delta: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let eta = linear_predictor(ds, eigen, coef, delta);
    let xtheta = fixed_effect_predictor(&ds.z, &ds.d, &ds.g, coef);
    (eta, xtheta)
}
