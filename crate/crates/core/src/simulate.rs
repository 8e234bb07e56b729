//! Synthetic data generation mirroring the evaluation protocol, plus
//! selection-quality metrics and the replication benchmark harness.
//!
//! Binary phenotypes follow
//! logit(pi) = logit(pi_0k) - log(1.3)*Sex + log(1.05)*Age/10
//!             + sum_S beta_j G~_j + sum_S' gamma_j (Sex o G~_j) + eps,
//! eps ~ N(0, h2_g*sigma^2*K + h2_d*sigma^2*K^D), with sigma^2 = pi^2/3 the
//! logistic-scale variance unit and per-population baseline prevalences
//! drawn from U(0.1, 0.9). Genotypes come from a Balding-Nichols style
//! structured-population model when no real panel is available.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Beta, Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::crossval::{auc, fixed_effect_predictor, kfold_cv, predict};
use crate::data::{standardize_genotypes, Coefficients, Dataset, Family, FamilyLink};
use crate::error::{Error, Result};
use crate::kinship::{build_kd, build_kd_cross, compute_grm, compute_grm_cross, eigendecompose,
    ExposureKind, KinshipPair};
use crate::solver::{fit_path, working_state, FitOptions, GridSpec};
use crate::varcomp::{fit_null_aireml, VcOptions};

/// Logistic residual variance: the "total variance on the logit scale" unit.
pub const LOGIT_SCALE_VAR: f64 = std::f64::consts::PI * std::f64::consts::PI / 3.0;

/// One simulated population with its cohort share.
#[derive(Debug, Clone)]
pub struct Population {
    pub label: String,
    pub proportion: f64,
}

/// Default seven-population mix (shares of the reference panel cohort).
pub fn default_populations() -> Vec<Population> {
    [
        ("African", 0.24),
        ("AdmixedAmerican", 0.13),
        ("CentralSouthAsian", 0.19),
        ("EastAsian", 0.20),
        ("European", 0.19),
        ("MiddleEastern", 0.04),
        ("Oceanian", 0.01),
    ]
    .iter()
    .map(|(l, p)| Population { label: l.to_string(), proportion: *p })
    .collect()
}

/// Simulation scenario description.
#[derive(Debug, Clone)]
pub struct SimSpec {
    pub n: usize,
    pub p: usize,
    /// Causal main-effect set size |S|.
    pub s_main: usize,
    /// Causal GEI set size |S'|.
    pub s_gei: usize,
    /// Variance fractions on the logit scale.
    pub h2_main: f64,
    pub h2_gei: f64,
    pub h2_poly: f64,
    pub h2_poly_gei: f64,
    /// Force S' to be a subset of S.
    pub hierarchy: bool,
    pub populations: Vec<Population>,
    /// Range of the per-population baseline prevalence draw.
    pub prevalence_range: (f64, f64),
    /// Fixed covariate effects (applied as stated in the phenotype model).
    pub sex_effect: f64,
    pub age_effect: f64,
    /// Background panel size used for the kinship matrices.
    pub q_kinship: usize,
    /// Balding-Nichols differentiation parameter.
    pub fst: f64,
    pub seed: u64,
}

impl SimSpec {
    pub fn new(n: usize, p: usize, seed: u64) -> Self {
        SimSpec {
            n,
            p,
            s_main: 100.min(p),
            s_gei: 50.min(p),
            h2_main: 0.2,
            h2_gei: 0.1,
            h2_poly: 0.4,
            h2_poly_gei: 0.2,
            hierarchy: true,
            populations: default_populations(),
            prevalence_range: (0.1, 0.9),
            sex_effect: -(1.3f64.ln()),
            age_effect: 1.05f64.ln(),
            q_kinship: 500,
            fst: 0.05,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.s_main > self.p || self.s_gei > self.p {
            return Err(Error::InvalidArgument(format!(
                "causal sets (|S|={}, |S'|={}) exceed p={}",
                self.s_main, self.s_gei, self.p
            )));
        }
        let total = self.h2_main + self.h2_gei + self.h2_poly + self.h2_poly_gei;
        if total > 1.0 + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "variance fractions sum to {total} > 1"
            )));
        }
        if self.hierarchy && self.s_gei > self.s_main {
            return Err(Error::InvalidArgument(
                "hierarchy requires |S'| <= |S|".into(),
            ));
        }
        let psum: f64 = self.populations.iter().map(|p| p.proportion).sum();
        if (psum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "population proportions sum to {psum}"
            )));
        }
        Ok(())
    }
}

/// Sampled causal effects and their supports.
#[derive(Debug, Clone)]
pub struct SimEffects {
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub support_beta: Vec<usize>,
    pub support_gamma: Vec<usize>,
}

fn choose(rng: &mut ChaCha20Rng, from: &[usize], count: usize) -> Vec<usize> {
    let mut pool = from.to_vec();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let i = rng.random_range(0..pool.len());
        out.push(pool.swap_remove(i));
    }
    out.sort_unstable();
    out
}

/// Draw causal sets and effect sizes:
/// beta_j ~ N(0, h2_main*sigma^2/|S|), gamma_j ~ N(0, h2_gei*sigma^2/|S'|).
pub fn sample_effects(spec: &SimSpec, rng: &mut ChaCha20Rng) -> SimEffects {
    let all: Vec<usize> = (0..spec.p).collect();
    let s_main = choose(rng, &all, spec.s_main);
    let s_gei = if spec.hierarchy {
        choose(rng, &s_main, spec.s_gei)
    } else {
        choose(rng, &all, spec.s_gei)
    };
    let sd_main = if spec.s_main > 0 {
        (spec.h2_main * LOGIT_SCALE_VAR / spec.s_main as f64).sqrt()
    } else {
        0.0
    };
    let sd_gei = if spec.s_gei > 0 {
        (spec.h2_gei * LOGIT_SCALE_VAR / spec.s_gei as f64).sqrt()
    } else {
        0.0
    };
    let mut beta = DVector::zeros(spec.p);
    let mut gamma = DVector::zeros(spec.p);
    for &j in &s_main {
        let z: f64 = StandardNormal.sample(rng);
        beta[j] = sd_main * z;
    }
    for &j in &s_gei {
        let z: f64 = StandardNormal.sample(rng);
        gamma[j] = sd_gei * z;
    }
    let support_beta: Vec<usize> = s_main.iter().copied().filter(|&j| beta[j] != 0.0).collect();
    let support_gamma: Vec<usize> = s_gei.iter().copied().filter(|&j| gamma[j] != 0.0).collect();
    SimEffects { beta, gamma, support_beta, support_gamma }
}

/// Population labels for each sample, deterministic shares.
pub fn assign_populations(spec: &SimSpec) -> Vec<usize> {
    let mut assignment = Vec::with_capacity(spec.n);
    for (k, pop) in spec.populations.iter().enumerate() {
        let count = (pop.proportion * spec.n as f64).round() as usize;
        for _ in 0..count {
            if assignment.len() < spec.n {
                assignment.push(k);
            }
        }
    }
    while assignment.len() < spec.n {
        assignment.push(spec.populations.len() - 1);
    }
    assignment
}

/// Balding-Nichols style genotypes: ancestral MAF ~ U(0.05, 0.5), per
/// population allele frequency ~ Beta(p(1-F)/F, (1-p)(1-F)/F), genotype
/// Binomial(2, p_jk). Columns are forced polymorphic.
pub fn simulate_genotypes(
    n: usize,
    p: usize,
    pops: &[usize],
    n_pops: usize,
    fst: f64,
    rng: &mut ChaCha20Rng,
) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(n, p);
    let f = fst.clamp(1e-4, 0.5);
    for j in 0..p {
        loop {
            let anc = rng.random_range(0.05..0.5);
            let mut freqs = vec![anc; n_pops];
            for fk in freqs.iter_mut() {
                let a = anc * (1.0 - f) / f;
                let b = (1.0 - anc) * (1.0 - f) / f;
                if let Ok(beta) = Beta::new(a, b) {
                    *fk = beta.sample(rng).clamp(0.01, 0.99);
                }
            }
            let mut sum = 0.0;
            for i in 0..n {
                let pr = freqs[pops[i]];
                let mut dose = 0.0;
                for _ in 0..2 {
                    if rng.random_range(0.0..1.0) < pr {
                        dose += 1.0;
                    }
                }
                g[(i, j)] = dose;
                sum += dose;
            }
            if sum > 0.0 && sum < 2.0 * n as f64 {
                break;
            }
        }
    }
    g
}

/// Phenotype draw for the scenario; `gstd` is the standardized candidate
/// matrix, `sex` the exposure and `age` the age covariate.
#[allow(clippy::too_many_arguments)]
pub fn simulate_phenotypes(
    spec: &SimSpec,
    effects: &SimEffects,
    gstd: &DMatrix<f64>,
    sex: &DVector<f64>,
    age: &DVector<f64>,
    k: &DMatrix<f64>,
    kd: &DMatrix<f64>,
    pops: &[usize],
    rng: &mut ChaCha20Rng,
) -> Result<DVector<f64>> {
    let n = spec.n;
    let (lo, hi) = spec.prevalence_range;
    let prevalences: Vec<f64> = (0..spec.populations.len())
        .map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo })
        .collect();
    let mut eta = DVector::from_fn(n, |i, _| {
        let pi0 = prevalences[pops[i]];
        (pi0 / (1.0 - pi0)).ln() + spec.sex_effect * sex[i] + spec.age_effect * age[i] / 10.0
    });
    for j in 0..spec.p {
        let (bj, gj) = (effects.beta[j], effects.gamma[j]);
        if bj != 0.0 || gj != 0.0 {
            for i in 0..n {
                eta[i] += gstd[(i, j)] * (bj + gj * sex[i]);
            }
        }
    }
    if spec.h2_poly > 0.0 || spec.h2_poly_gei > 0.0 {
        let eig = eigendecompose(
            k,
            kd,
            spec.h2_poly * LOGIT_SCALE_VAR,
            spec.h2_poly_gei * LOGIT_SCALE_VAR,
            true,
        )?;
        for j in 0..n {
            let z: f64 = StandardNormal.sample(rng);
            let sd = eig.lambda[j].max(0.0).sqrt();
            if sd > 0.0 {
                let col = eig.u.column(j);
                for i in 0..n {
                    eta[i] += col[i] * sd * z;
                }
            }
        }
    }
    Ok(DVector::from_fn(n, |i, _| {
        let pr = 1.0 / (1.0 + (-eta[i]).exp());
        if rng.random_range(0.0..1.0) < pr {
            1.0
        } else {
            0.0
        }
    }))
}

/// Selection-quality statistics for one coefficient target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionMetrics {
    pub model_size: usize,
    pub fpr: f64,
    pub tpr: f64,
    pub fdr: f64,
    pub f1: f64,
    /// FDR was 0/0 (empty model) and reported as 0.
    pub fdr_undefined: bool,
}

fn metrics_from_supports(estimated: &[bool], truth: &[bool]) -> SelectionMetrics {
    let p = estimated.len();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut n_true = 0usize;
    for j in 0..p {
        if truth[j] {
            n_true += 1;
            if estimated[j] {
                tp += 1;
            }
        } else if estimated[j] {
            fp += 1;
        }
    }
    let model_size = tp + fp;
    let n_null = p - n_true;
    let fpr = if n_null > 0 { fp as f64 / n_null as f64 } else { 0.0 };
    let tpr = if n_true > 0 { tp as f64 / n_true as f64 } else { 0.0 };
    let (fdr, fdr_undefined) = if model_size > 0 {
        (fp as f64 / model_size as f64, false)
    } else {
        (0.0, true)
    };
    let f1 = if tpr == 0.0 || fdr >= 1.0 {
        0.0
    } else {
        2.0 / (1.0 / (1.0 - fdr) + 1.0 / tpr)
    };
    SelectionMetrics { model_size, fpr, tpr, fdr, f1, fdr_undefined }
}

/// Metrics for the main-effect, GEI and combined coefficient targets.
pub fn selection_metrics(
    coef: &Coefficients,
    support_beta: &[usize],
    support_gamma: &[usize],
) -> (SelectionMetrics, SelectionMetrics, SelectionMetrics) {
    let p = coef.beta.len();
    let mut truth_b = vec![false; p];
    for &j in support_beta {
        truth_b[j] = true;
    }
    let mut truth_g = vec![false; p];
    for &j in support_gamma {
        truth_g[j] = true;
    }
    let est_b: Vec<bool> = (0..p).map(|j| coef.beta[j] != 0.0).collect();
    let est_g: Vec<bool> = (0..p).map(|j| coef.gamma[j] != 0.0).collect();
    let mb = metrics_from_supports(&est_b, &truth_b);
    let mg = metrics_from_supports(&est_g, &truth_g);
    let est_c: Vec<bool> = est_b.iter().chain(est_g.iter()).copied().collect();
    let truth_c: Vec<bool> = truth_b.iter().chain(truth_g.iter()).copied().collect();
    let mc = metrics_from_supports(&est_c, &truth_c);
    (mb, mg, mc)
}

/// Benchmark run configuration.
#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub n_reps: usize,
    /// Training fraction of the train/test split.
    pub split: f64,
    pub cv_folds: usize,
    pub grid: GridSpec,
    pub vc: VcOptions,
    pub fit: FitOptions,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            n_reps: 100,
            split: 0.8,
            cv_folds: 5,
            grid: GridSpec::default(),
            vc: VcOptions::default(),
            fit: FitOptions::default(),
        }
    }
}

/// One replication's outcome.
#[derive(Debug, Clone)]
pub struct RepResult {
    pub rep: usize,
    pub chosen_lambda: f64,
    pub chosen_rho: f64,
    pub beta: SelectionMetrics,
    pub gamma: SelectionMetrics,
    pub combined: SelectionMetrics,
    pub test_auc: f64,
    pub hierarchy_violations: usize,
    pub error: Option<String>,
}

/// Aggregated benchmark report (means over successful replications).
#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub reps: Vec<RepResult>,
    pub mean_beta: SelectionMetrics,
    pub mean_gamma: SelectionMetrics,
    pub mean_combined: SelectionMetrics,
    pub mean_test_auc: f64,
    pub hierarchy_violations: usize,
    pub n_failed: usize,
}

fn mean_metrics(items: &[&SelectionMetrics]) -> SelectionMetrics {
    let n = items.len().max(1) as f64;
    SelectionMetrics {
        model_size: (items.iter().map(|m| m.model_size).sum::<usize>() as f64 / n).round()
            as usize,
        fpr: items.iter().map(|m| m.fpr).sum::<f64>() / n,
        tpr: items.iter().map(|m| m.tpr).sum::<f64>() / n,
        fdr: items.iter().map(|m| m.fdr).sum::<f64>() / n,
        f1: items.iter().map(|m| m.f1).sum::<f64>() / n,
        fdr_undefined: false,
    }
}

/// Run the full simulate / split / CV-fit / score protocol.
pub fn run_benchmark(spec: &SimSpec, opts: &BenchOptions) -> Result<BenchmarkReport> {
    spec.validate()?;
    if !(0.0..1.0).contains(&(1.0 - opts.split)) || opts.split <= 0.0 {
        return Err(Error::InvalidArgument(format!("bad split ratio {}", opts.split)));
    }
    let reps: Vec<RepResult> = (0..opts.n_reps)
        .into_par_iter()
        .map(|rep| match run_replication(spec, opts, rep) {
            Ok(r) => r,
            Err(e) => RepResult {
                rep,
                chosen_lambda: f64::NAN,
                chosen_rho: f64::NAN,
                beta: metrics_from_supports(&[], &[]),
                gamma: metrics_from_supports(&[], &[]),
                combined: metrics_from_supports(&[], &[]),
                test_auc: f64::NAN,
                hierarchy_violations: 0,
                error: Some(e.to_string()),
            },
        })
        .collect();

    let ok: Vec<&RepResult> = reps.iter().filter(|r| r.error.is_none()).collect();
    let n_failed = reps.len() - ok.len();
    let mean_beta = mean_metrics(&ok.iter().map(|r| &r.beta).collect::<Vec<_>>());
    let mean_gamma = mean_metrics(&ok.iter().map(|r| &r.gamma).collect::<Vec<_>>());
    let mean_combined = mean_metrics(&ok.iter().map(|r| &r.combined).collect::<Vec<_>>());
    let mean_test_auc = if ok.is_empty() {
        f64::NAN
    } else {
        ok.iter().map(|r| r.test_auc).sum::<f64>() / ok.len() as f64
    };
    let hierarchy_violations = reps.iter().map(|r| r.hierarchy_violations).sum();
    Ok(BenchmarkReport {
        reps,
        mean_beta,
        mean_gamma,
        mean_combined,
        mean_test_auc,
        hierarchy_violations,
        n_failed,
    })
}

/// One simulated cohort: raw genotypes, covariates, effects and phenotypes.
#[derive(Debug, Clone)]
pub struct SimulatedCohort {
    pub g_raw: DMatrix<f64>,
    pub panel_raw: DMatrix<f64>,
    pub sex: DVector<f64>,
    pub age: DVector<f64>,
    pub pops: Vec<usize>,
    pub effects: SimEffects,
    pub y: DVector<f64>,
}

/// Draw a full cohort for one replication.
pub fn simulate_cohort(spec: &SimSpec, rng: &mut ChaCha20Rng) -> Result<SimulatedCohort> {
    let pops = assign_populations(spec);
    let n_pops = spec.populations.len();
    let g_raw = simulate_genotypes(spec.n, spec.p, &pops, n_pops, spec.fst, rng);
    let panel_raw = simulate_genotypes(spec.n, spec.q_kinship, &pops, n_pops, spec.fst, rng);
    let sex = DVector::from_fn(spec.n, |_, _| {
        if rng.random_range(0.0..1.0) < 0.5 {
            1.0
        } else {
            0.0
        }
    });
    let age_dist = Normal::new(50.0, 10.0).expect("valid normal");
    let age = DVector::from_fn(spec.n, |_, _| age_dist.sample(rng));

    let gstd_full = standardize_genotypes(&g_raw, None)?.matrix;
    let panel_std_full = standardize_genotypes(&panel_raw, None)?.matrix;
    let k_full = compute_grm(&panel_std_full)?;
    let (kd_full, _) = build_kd(&k_full, &sex, None)?;

    let effects = sample_effects(spec, rng);
    let y = simulate_phenotypes(
        spec, &effects, &gstd_full, &sex, &age, &k_full, &kd_full, &pops, rng,
    )?;
    Ok(SimulatedCohort { g_raw, panel_raw, sex, age, pops, effects, y })
}

/// Cohort draw seeded from the scenario (convenience for dataset emission).
pub fn simulate_cohort_seeded(spec: &SimSpec) -> Result<SimulatedCohort> {
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    simulate_cohort(spec, &mut rng)
}

fn run_replication(spec: &SimSpec, opts: &BenchOptions, rep: usize) -> Result<RepResult> {
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed.wrapping_add(rep as u64));
    let cohort = simulate_cohort(spec, &mut rng)?;
    let SimulatedCohort { g_raw, panel_raw, sex, age, effects, y, .. } = cohort;

    // Stratified 80/20 split.
    let (train, test) = stratified_split(&y, opts.split, &mut rng)?;

    // Training-set preparation: standardize candidates and the kinship
    // panel with training-sample MAFs only.
    let g_train_raw = g_raw.select_rows(&train);
    let g_test_raw = g_raw.select_rows(&test);
    let std_train = standardize_genotypes(&g_train_raw, None)?;
    let g_train = std_train.matrix;
    let g_test = standardize_genotypes(&g_test_raw, Some(&std_train.mafs))?.matrix;

    let panel_train_raw = panel_raw.select_rows(&train);
    let panel_test_raw = panel_raw.select_rows(&test);
    let std_panel = standardize_genotypes(&panel_train_raw, None)?;
    let panel_train = std_panel.matrix;
    let panel_test = standardize_genotypes(&panel_test_raw, Some(&std_panel.mafs))?.matrix;

    let sex_train = DVector::from_fn(train.len(), |i, _| sex[train[i]]);
    let sex_test = DVector::from_fn(test.len(), |i, _| sex[test[i]]);
    let k_train = compute_grm(&panel_train)?;
    let (kd_train, _) = build_kd(&k_train, &sex_train, None)?;
    let kin_train =
        KinshipPair::new(k_train.clone(), kd_train.clone(), spec.q_kinship, ExposureKind::Binary);

    let z_train = DMatrix::from_fn(train.len(), 2, |i, c| {
        if c == 0 {
            1.0
        } else {
            age[train[i]]
        }
    });
    let z_test =
        DMatrix::from_fn(test.len(), 2, |i, c| if c == 0 { 1.0 } else { age[test[i]] });
    let ds_train = Dataset::new(
        DVector::from_fn(train.len(), |i, _| y[train[i]]),
        z_train,
        sex_train.clone(),
        g_train,
        train.iter().map(|&i| format!("s{i}")).collect(),
        (0..spec.p).map(|j| format!("v{j}")).collect(),
    )?;

    let family = FamilyLink::new(Family::Binomial);
    let cv = kfold_cv(
        &ds_train,
        &kin_train,
        &family,
        &opts.grid,
        opts.cv_folds,
        spec.seed.wrapping_add(rep as u64).wrapping_mul(31),
        None,
        &opts.vc,
        &opts.fit,
    )?;

    // Final fit on the full training set over the CV grid.
    let null = fit_null_aireml(&ds_train, &kin_train, &family, &opts.vc)?;
    let eigen = eigendecompose(&kin_train.k, &kin_train.kd, null.tau_g, null.tau_d, true)?;
    let mut grid = opts.grid.clone();
    grid.lambdas = Some(cv.lambdas.clone());
    let path = fit_path(&ds_train, &eigen, &null, &grid, &opts.fit)?;
    let (ri, li) = cv.chosen_min;
    let chosen = &path.rho_paths[ri].points[li];
    if let Some(e) = &chosen.error {
        return Err(Error::Numerical(format!("chosen grid point failed: {e}")));
    }

    let (mb, mg, mc) = selection_metrics(&chosen.coef, &effects.support_beta, &effects.support_gamma);

    // Held-out scoring through the conditional expectation.
    let (_, w, ytilde) = working_state(&ds_train, &eigen, Family::Binomial, &chosen.coef, &chosen.delta);
    let xtheta_train =
        fixed_effect_predictor(&ds_train.z, &ds_train.d, &ds_train.g, &chosen.coef);
    let xtheta_test = fixed_effect_predictor(&z_test, &sex_test, &g_test, &chosen.coef);
    let k12 = compute_grm_cross(&panel_test, &panel_train)?;
    let kd12 = build_kd_cross(&k12, &sex_test, &sex_train, ExposureKind::Binary, None)?;
    let (scores, _) = predict(
        Family::Binomial,
        null.tau_g,
        null.tau_d,
        null.phi,
        &w,
        &ytilde,
        &xtheta_train,
        &xtheta_test,
        &k12,
        &kd12,
        &kin_train.k,
        &kin_train.kd,
    )?;
    let y_test = DVector::from_fn(test.len(), |i, _| y[test[i]]);
    let test_auc = auc(&scores, &y_test).unwrap_or(f64::NAN);

    let hierarchy_violations = cv.hierarchy_violations + path.hierarchy_violations();

    Ok(RepResult {
        rep,
        chosen_lambda: cv.chosen_lambda(),
        chosen_rho: cv.chosen_rho(),
        beta: mb,
        gamma: mg,
        combined: mc,
        test_auc,
        hierarchy_violations,
        error: None,
    })
}

fn stratified_split(
    y: &DVector<f64>,
    split: f64,
    rng: &mut ChaCha20Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = y.len();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [0.0, 1.0] {
        let mut members: Vec<usize> = (0..n).filter(|&i| y[i] == class).collect();
        if members.is_empty() {
            return Err(Error::Data("simulated response is single-class".into()));
        }
        // Fisher-Yates shuffle.
        for i in (1..members.len()).rev() {
            let j = rng.random_range(0..=i);
            members.swap(i, j);
        }
        let cut = ((members.len() as f64) * split).round() as usize;
        let cut = cut.clamp(1, members.len() - 1);
        train.extend_from_slice(&members[..cut]);
        test.extend_from_slice(&members[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
