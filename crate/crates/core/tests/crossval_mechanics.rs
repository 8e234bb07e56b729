//! Fold mechanics and cross-validation identities that need the full
//! null-fit / path / predict pipeline.

mod common;

use nalgebra::DVector;

use pqlgei_core::crossval::{deviance, kfold_cv, score_point};
use pqlgei_core::data::{Dataset, Family, FamilyLink};
use pqlgei_core::kinship::{eigendecompose, KinshipPair};
use pqlgei_core::solver::{fit_null_state, FitOptions, GridSpec, PathPoint};
use pqlgei_core::varcomp::{fit_null_aireml, VcOptions};

use common::make_instance;

fn small_grid(n_lambda: usize) -> GridSpec {
    GridSpec {
        n_lambda,
        lambda_min_ratio: Some(0.2),
        rho_grid: vec![0.5],
        ..GridSpec::default()
    }
}

#[test]
fn leave_one_out_runs_and_partitions() {
    let inst = make_instance(20, 6, Family::Binomial, 100);
    let cv = kfold_cv(
        &inst.ds,
        &inst.kin,
        &FamilyLink::new(Family::Binomial),
        &small_grid(4),
        20,
        7,
        None,
        &VcOptions::default(),
        &FitOptions::default(),
    )
    .unwrap();
    // Folds partition the samples, one per fold.
    let mut counts = vec![0usize; 20];
    for &f in &cv.fold_assignment {
        counts[f] += 1;
    }
    assert!(counts.iter().all(|&c| c == 1));
    for li in 0..4 {
        assert!(cv.mean_deviance[0][li].is_finite());
    }
}

#[test]
fn fixed_seed_reproduces_folds_and_selection() {
    let inst = make_instance(40, 10, Family::Binomial, 101);
    let run = |seed: u64| {
        kfold_cv(
            &inst.ds,
            &inst.kin,
            &FamilyLink::new(Family::Binomial),
            &small_grid(5),
            4,
            seed,
            None,
            &VcOptions::default(),
            &FitOptions::default(),
        )
        .unwrap()
    };
    let a = run(42);
    let b = run(42);
    assert_eq!(a.fold_assignment, b.fold_assignment);
    assert_eq!(a.chosen_min, b.chosen_min);
    assert_eq!(a.mean_deviance, b.mean_deviance);
    let c = run(43);
    assert_ne!(a.fold_assignment, c.fold_assignment);
}

#[test]
fn duplicated_rows_give_validation_deviance_near_training_deviance() {
    let inst = make_instance(30, 8, Family::Binomial, 102);
    let n = 30;
    // Duplicate every sample; fold 0 = first copy, fold 1 = second copy.
    let rows: Vec<usize> = (0..n).chain(0..n).collect();
    let ds2 = Dataset::new(
        DVector::from_fn(2 * n, |i, _| inst.ds.y[rows[i]]),
        inst.ds.z.select_rows(&rows),
        DVector::from_fn(2 * n, |i, _| inst.ds.d[rows[i]]),
        inst.ds.g.select_rows(&rows),
        rows.iter().enumerate().map(|(i, &r)| format!("{}c{}", inst.ds.sample_ids[r], i / n)).collect(),
        inst.ds.variant_ids.clone(),
    )
    .unwrap();
    let kin2 = KinshipPair::new(
        inst.kin.k.select_rows(&rows).select_columns(&rows),
        inst.kin.kd.select_rows(&rows).select_columns(&rows),
        inst.kin.q,
        inst.kin.exposure,
    );
    let folds: Vec<usize> = (0..2 * n).map(|i| i / n).collect();
    let grid = small_grid(4);
    let cv = kfold_cv(
        &ds2,
        &kin2,
        &FamilyLink::new(Family::Binomial),
        &grid,
        2,
        1,
        Some(folds),
        &VcOptions::default(),
        &FitOptions::default(),
    )
    .unwrap();

    // Training deviance oracle: refit on one copy with the same grid and
    // score its own rows at each grid point.
    let family = FamilyLink::new(Family::Binomial);
    let null = fit_null_aireml(&inst.ds, &inst.kin, &family, &VcOptions::default()).unwrap();
    let eigen = eigendecompose(&inst.kin.k, &inst.kin.kd, null.tau_g, null.tau_d, true).unwrap();
    let mut refit_grid = grid.clone();
    refit_grid.lambdas = Some(cv.lambdas.clone());
    let path =
        pqlgei_core::solver::fit_path(&inst.ds, &eigen, &null, &refit_grid, &FitOptions::default())
            .unwrap();
    for (li, pt) in path.rho_paths[0].points.iter().enumerate() {
        let train_dev = deviance(&pt_mu(&inst.ds, &eigen, pt), &inst.ds.y, Family::Binomial);
        let cv_dev = cv.mean_deviance[0][li];
        let rel = (cv_dev - train_dev).abs() / train_dev.abs().max(1.0);
        assert!(
            rel < 5e-3,
            "grid point {li}: validation deviance {cv_dev:.6} vs training {train_dev:.6}"
        );
    }
}

fn pt_mu(
    ds: &Dataset,
    eigen: &pqlgei_core::kinship::CovarianceEigen,
    pt: &PathPoint,
) -> DVector<f64> {
    let (mu, _, _) =
        pqlgei_core::solver::working_state(ds, eigen, Family::Binomial, &pt.coef, &pt.delta);
    mu
}

#[test]
fn cv_deviance_at_lambda_max_matches_null_model() {
    let inst = make_instance(60, 20, Family::Binomial, 103);
    let family = FamilyLink::new(Family::Binomial);
    let grid = GridSpec {
        n_lambda: 5,
        lambda_min_ratio: Some(0.2),
        rho_grid: vec![0.0, 0.5],
        ..GridSpec::default()
    };
    let k = 3;
    let seed = 5;
    let cv = kfold_cv(
        &inst.ds,
        &inst.kin,
        &family,
        &grid,
        k,
        seed,
        None,
        &VcOptions::default(),
        &FitOptions::default(),
    )
    .unwrap();

    // Oracle: per fold, the null-model validation deviance via the same
    // conditional-expectation scoring, averaged over folds.
    let folds = cv.fold_assignment.clone();
    for (ri, _rho) in grid.rho_grid.iter().enumerate() {
        let mut devs = Vec::new();
        for fold in 0..k {
            let train: Vec<usize> = (0..60).filter(|&i| folds[i] != fold).collect();
            let valid: Vec<usize> = (0..60).filter(|&i| folds[i] == fold).collect();
            let ds_train = Dataset::new(
                DVector::from_fn(train.len(), |i, _| inst.ds.y[train[i]]),
                inst.ds.z.select_rows(&train),
                DVector::from_fn(train.len(), |i, _| inst.ds.d[train[i]]),
                inst.ds.g.select_rows(&train),
                train.iter().map(|&i| inst.ds.sample_ids[i].clone()).collect(),
                inst.ds.variant_ids.clone(),
            )
            .unwrap();
            let ds_valid = Dataset::new(
                DVector::from_fn(valid.len(), |i, _| inst.ds.y[valid[i]]),
                inst.ds.z.select_rows(&valid),
                DVector::from_fn(valid.len(), |i, _| inst.ds.d[valid[i]]),
                inst.ds.g.select_rows(&valid),
                valid.iter().map(|&i| inst.ds.sample_ids[i].clone()).collect(),
                inst.ds.variant_ids.clone(),
            )
            .unwrap();
            let kin_train = inst.kin.sub_block(&train);
            let null = fit_null_aireml(&ds_train, &kin_train, &family, &VcOptions::default())
                .unwrap();
            let eigen =
                eigendecompose(&kin_train.k, &kin_train.kd, null.tau_g, null.tau_d, true).unwrap();
            let ns = fit_null_state(&ds_train, &eigen, &null).unwrap();
            let pt = PathPoint {
                lambda: cv.lambdas[ri][0],
                rho: grid.rho_grid[ri],
                coef: ns.coef.clone(),
                delta: ns.delta.clone(),
                objective: ns.objective,
                iterations: 0,
                converged: true,
                n_active: 0,
                n_screened: 0,
                kkt_refit_rounds: 0,
                min_zero_slack: 0.0,
                max_active_residual: 0.0,
                error: None,
            };
            let (k12, kd12) = inst.kin.cross_block(&valid, &train);
            let scores =
                score_point(&ds_train, &eigen, &kin_train, &null, &pt, &ds_valid, &k12, &kd12)
                    .unwrap();
            devs.push(deviance(&scores, &ds_valid.y, Family::Binomial));
        }
        let null_mean = devs.iter().sum::<f64>() / k as f64;
        let top = cv.mean_deviance[ri][0];
        assert!(
            (top - null_mean).abs() <= 1e-6 * null_mean.abs().max(1.0),
            "rho index {ri}: top-of-path deviance {top:.8} vs null {null_mean:.8}"
        );
    }
}

#[test]
fn constant_training_response_is_an_error_naming_the_fold() {
    let mut inst = make_instance(24, 5, Family::Binomial, 104);
    // Exactly one case, placed in fold 0's validation set: training rows
    // for fold 0 are all controls.
    inst.ds.y = DVector::zeros(24);
    inst.ds.y[3] = 1.0;
    let mut folds = vec![1usize; 24];
    folds[3] = 0;
    folds[10] = 0;
    folds[11] = 0;
    let err = kfold_cv(
        &inst.ds,
        &inst.kin,
        &FamilyLink::new(Family::Binomial),
        &small_grid(3),
        2,
        0,
        Some(folds),
        &VcOptions::default(),
        &FitOptions::default(),
    )
    .unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("fold 0") && msg.contains("constant"), "{msg}");
}

#[test]
fn gaussian_family_cv_runs_without_auc() {
    let inst = make_instance(36, 8, Family::Gaussian, 105);
    let cv = kfold_cv(
        &inst.ds,
        &inst.kin,
        &FamilyLink::new(Family::Gaussian),
        &small_grid(3),
        3,
        9,
        None,
        &VcOptions::default(),
        &FitOptions::default(),
    )
    .unwrap();
    assert!(cv.mean_deviance[0].iter().all(|v| v.is_finite()));
    assert!(cv.mean_auc[0].iter().all(|v| v.is_nan()));
}
