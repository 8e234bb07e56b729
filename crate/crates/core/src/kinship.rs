//! Genetic similarity matrices: the GRM `K`, its exposure-masked companion
//! `K^D`, principal components, and the spectral decomposition of the fitted
//! random-effect covariance tau_g*K + tau_d*K^D.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// How the exposure enters the masked kinship matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExposureKind {
    /// K^D_ij = K_ij when D_i = D_j, else 0.
    Binary,
    /// K^D_ij = K_ij * (1 - d(D_i, D_j)) for a metric d with range [0,1].
    Continuous,
}

/// The GRM and its exposure-masked companion, with builder metadata.
#[derive(Debug, Clone)]
pub struct KinshipPair {
    pub k: DMatrix<f64>,
    pub kd: DMatrix<f64>,
    /// Number of variants used to build K.
    pub q: usize,
    pub exposure: ExposureKind,
}

impl KinshipPair {
    pub fn new(k: DMatrix<f64>, kd: DMatrix<f64>, q: usize, exposure: ExposureKind) -> Self {
        KinshipPair { k, kd, q, exposure }
    }

    pub fn n(&self) -> usize {
        self.k.nrows()
    }

    /// Symmetric sub-block over the given sample indices (used by CV folds).
    pub fn sub_block(&self, rows: &[usize]) -> KinshipPair {
        KinshipPair {
            k: self.k.select_rows(rows).select_columns(rows),
            kd: self.kd.select_rows(rows).select_columns(rows),
            q: self.q,
            exposure: self.exposure,
        }
    }

    /// Rectangular cross-block (rows x cols) of both matrices.
    pub fn cross_block(&self, rows: &[usize], cols: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
        (
            self.k.select_rows(rows).select_columns(cols),
            self.kd.select_rows(rows).select_columns(cols),
        )
    }

    /// Symmetry and positive-diagonal checks; `tol` on max asymmetry.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let n = self.n();
        if self.kd.nrows() != n || self.k.ncols() != n || self.kd.ncols() != n {
            return Err(Error::Dimension("K and K^D must be square of equal size".into()));
        }
        for i in 0..n {
            if self.k[(i, i)] <= 0.0 {
                return Err(Error::Data(format!("K has non-positive diagonal at sample {i}")));
            }
            for j in 0..i {
                if (self.k[(i, j)] - self.k[(j, i)]).abs() > tol
                    || (self.kd[(i, j)] - self.kd[(j, i)]).abs() > tol
                {
                    return Err(Error::Numerical(format!(
                        "kinship asymmetry above {tol} at ({i},{j})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// K = G~ G~^T / q over the q standardized variant columns of `gstd`.
pub fn compute_grm(gstd: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q = gstd.ncols();
    if q == 0 {
        return Err(Error::InvalidArgument("GRM requires at least one variant".into()));
    }
    let mut k = gstd * gstd.transpose();
    k /= q as f64;
    // Force exact symmetry; the product is symmetric up to rounding.
    let n = k.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Cross GRM block between two sample sets standardized on the same variant
/// panel: K12 = G~_a G~_b^T / q.
pub fn compute_grm_cross(gstd_a: &DMatrix<f64>, gstd_b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q = gstd_a.ncols();
    if q == 0 {
        return Err(Error::InvalidArgument("GRM requires at least one variant".into()));
    }
    if gstd_b.ncols() != q {
        return Err(Error::Dimension(format!(
            "variant panels disagree: {} vs {}",
            q,
            gstd_b.ncols()
        )));
    }
    Ok(gstd_a * gstd_b.transpose() / q as f64)
}

/// Default continuous-exposure metric: |x - y| / (max D - min D).
pub fn range_metric(d: &DVector<f64>) -> impl Fn(f64, f64) -> f64 {
    let lo = d.min();
    let hi = d.max();
    let range = (hi - lo).max(f64::MIN_POSITIVE);
    move |x: f64, y: f64| (x - y).abs() / range
}

/// Build the exposure-masked kinship K^D from K and the exposure vector.
///
/// Binary exposures (all entries 0/1) use the indicator mask. Continuous
/// exposures use `metric` when given, else the range metric; metric values
/// must lie in [0, 1].
pub fn build_kd(
    k: &DMatrix<f64>,
    d: &DVector<f64>,
    metric: Option<&dyn Fn(f64, f64) -> f64>,
) -> Result<(DMatrix<f64>, ExposureKind)> {
    let n = k.nrows();
    if d.len() != n {
        return Err(Error::Dimension(format!("exposure length {} != n {}", d.len(), n)));
    }
    let binary = d.iter().all(|&v| v == 0.0 || v == 1.0);
    let mut kd = DMatrix::zeros(n, n);
    if binary && metric.is_none() {
        for i in 0..n {
            for j in 0..=i {
                let v = if d[i] == d[j] { k[(i, j)] } else { 0.0 };
                kd[(i, j)] = v;
                kd[(j, i)] = v;
            }
        }
        Ok((kd, ExposureKind::Binary))
    } else {
        let default_metric;
        let m: &dyn Fn(f64, f64) -> f64 = match metric {
            Some(m) => m,
            None => {
                default_metric = range_metric(d);
                &default_metric
            }
        };
        for i in 0..n {
            for j in 0..=i {
                let dist = m(d[i], d[j]);
                if !(0.0..=1.0).contains(&dist) {
                    return Err(Error::InvalidArgument(format!(
                        "exposure metric value {dist} outside [0,1] for pair ({i},{j})"
                    )));
                }
                let v = k[(i, j)] * (1.0 - dist);
                kd[(i, j)] = v;
                kd[(j, i)] = v;
            }
        }
        Ok((kd, ExposureKind::Continuous))
    }
}

/// Exposure mask applied to a rectangular cross-kinship block between two
/// sample sets (rows and columns carry their own exposures).
pub fn build_kd_cross(
    k12: &DMatrix<f64>,
    d_rows: &DVector<f64>,
    d_cols: &DVector<f64>,
    kind: ExposureKind,
    metric: Option<&dyn Fn(f64, f64) -> f64>,
) -> Result<DMatrix<f64>> {
    if k12.nrows() != d_rows.len() || k12.ncols() != d_cols.len() {
        return Err(Error::Dimension("cross-kinship block and exposures disagree".into()));
    }
    let mut kd = DMatrix::zeros(k12.nrows(), k12.ncols());
    match kind {
        ExposureKind::Binary => {
            for i in 0..k12.nrows() {
                for j in 0..k12.ncols() {
                    if d_rows[i] == d_cols[j] {
                        kd[(i, j)] = k12[(i, j)];
                    }
                }
            }
        }
        ExposureKind::Continuous => {
            let m = metric.ok_or_else(|| {
                Error::InvalidArgument("continuous exposure mask requires a metric".into())
            })?;
            for i in 0..k12.nrows() {
                for j in 0..k12.ncols() {
                    let dist = m(d_rows[i], d_cols[j]);
                    if !(0.0..=1.0).contains(&dist) {
                        return Err(Error::InvalidArgument(format!(
                            "exposure metric value {dist} outside [0,1]"
                        )));
                    }
                    kd[(i, j)] = k12[(i, j)] * (1.0 - dist);
                }
            }
        }
    }
    Ok(kd)
}

/// Build a [`KinshipPair`] from standardized panel genotypes and an exposure.
pub fn build_kinship_pair(
    gstd: &DMatrix<f64>,
    d: &DVector<f64>,
    metric: Option<&dyn Fn(f64, f64) -> f64>,
) -> Result<KinshipPair> {
    let k = compute_grm(gstd)?;
    let (kd, exposure) = build_kd(&k, d, metric)?;
    Ok(KinshipPair::new(k, kd, gstd.ncols(), exposure))
}

/// Spectral decomposition of the fitted random-effect covariance.
#[derive(Debug, Clone)]
pub struct CovarianceEigen {
    /// Orthonormal eigenvectors, one per column, matching `lambda` order.
    pub u: DMatrix<f64>,
    /// Eigenvalues sorted descending, strictly positive after ridge repair.
    pub lambda: DVector<f64>,
    /// Ridge constant added to restore positive definiteness (0 when none).
    pub ridge: f64,
}

/// Relative eigenvalue floor: lambda_n must exceed 1e-8 * lambda_1.
const EIGEN_REL_FLOOR: f64 = 1e-8;
/// Absolute fallback floor when the covariance is (numerically) the zero
/// matrix, e.g. tau_g = tau_d = 0.
const EIGEN_ABS_FLOOR: f64 = 1e-12;

/// Eigendecompose Sigma_b = tau_g*K + tau_d*K^D, sorting eigenvalues in
/// descending order. If the smallest eigenvalue falls at or below the floor
/// eps = 1e-8 * lambda_1, the smallest ridge c restoring that floor is added
/// to every eigenvalue and recorded.
pub fn eigendecompose(
    k: &DMatrix<f64>,
    kd: &DMatrix<f64>,
    tau_g: f64,
    tau_d: f64,
    allow_ridge: bool,
) -> Result<CovarianceEigen> {
    if tau_g < 0.0 || tau_d < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "variance components must be non-negative (tau_g={tau_g}, tau_d={tau_d})"
        )));
    }
    let sigma = k * tau_g + kd * tau_d;
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entries in random-effect covariance".into()));
    }
    let eig = sigma.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut lambda = DVector::zeros(n);
    let mut u = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        lambda[dst] = eig.eigenvalues[src];
        u.set_column(dst, &eig.eigenvectors.column(src));
    }
    let top = lambda[0].max(0.0);
    let floor = if top > 0.0 { EIGEN_REL_FLOOR * top } else { EIGEN_ABS_FLOOR };
    let mut ridge = 0.0;
    if lambda[n - 1] <= floor {
        if !allow_ridge {
            return Err(Error::Numerical(format!(
                "random-effect covariance is not positive definite (min eigenvalue {})",
                lambda[n - 1]
            )));
        }
        ridge = floor - lambda[n - 1];
        for v in lambda.iter_mut() {
            *v += ridge;
        }
    }
    Ok(CovarianceEigen { u, lambda, ridge })
}

/// First k principal-component score columns of K: eigenvectors scaled by
/// the square root of their eigenvalues.
pub fn top_pcs(k: &DMatrix<f64>, n_pcs: usize) -> Result<DMatrix<f64>> {
    let n = k.nrows();
    if n_pcs == 0 || n_pcs > n {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= {n}, got {n_pcs}")));
    }
    let eig = k.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut pcs = DMatrix::zeros(n, n_pcs);
    for (dst, &src) in order.iter().take(n_pcs).enumerate() {
        let scale = eig.eigenvalues[src].max(0.0).sqrt();
        pcs.set_column(dst, &(eig.eigenvectors.column(src) * scale));
    }
    Ok(pcs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use crate::data::standardize_genotypes;

    fn random_standardized(n: usize, q: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut g = DMatrix::from_fn(n, q, |_, _| rng.random_range(0..3) as f64);
        for j in 0..q {
            g[(0, j)] = 0.0;
            g[(1, j)] = 2.0;
        }
        standardize_genotypes(&g, None).unwrap().matrix
    }

    #[test]
    fn grm_single_column() {
        let gstd = DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]);
        let k = compute_grm(&gstd).unwrap();
        assert_eq!(k, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
    }

    #[test]
    fn grm_duplicated_rows_match_diagonal() {
        let mut gstd = random_standardized(5, 20, 1);
        for j in 0..20 {
            let v = gstd[(2, j)];
            gstd[(4, j)] = v;
        }
        let k = compute_grm(&gstd).unwrap();
        assert_relative_eq!(k[(2, 4)], k[(2, 2)], epsilon = 1e-12);
    }

    #[test]
    fn grm_matches_triple_loop() {
        let gstd = random_standardized(6, 50, 2);
        let k = compute_grm(&gstd).unwrap();
        for i in 0..6 {
            for l in 0..6 {
                let mut acc = 0.0;
                for j in 0..50 {
                    acc += gstd[(i, j)] * gstd[(l, j)];
                }
                assert_relative_eq!(k[(i, l)], acc / 50.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn grm_diagonal_mean_near_one() {
        // Hardy-Weinberg genotype draws so the binomial variance matches the
        // standardization denominator.
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut g = DMatrix::zeros(30, 200);
        for j in 0..200 {
            let p = rng.random_range(0.1..0.5);
            for i in 0..30 {
                let mut dose = 0.0;
                for _ in 0..2 {
                    if rng.random_range(0.0..1.0) < p {
                        dose += 1.0;
                    }
                }
                g[(i, j)] = dose;
            }
            g[(0, j)] = 0.0;
            g[(1, j)] = 2.0;
        }
        let gstd = standardize_genotypes(&g, None).unwrap().matrix;
        let k = compute_grm(&gstd).unwrap();
        let mean_diag: f64 = (0..30).map(|i| k[(i, i)]).sum::<f64>() / 30.0;
        assert!((mean_diag - 1.0).abs() < 0.15, "mean diag {mean_diag}");
    }

    #[test]
    fn grm_quadratic_form_is_psd() {
        let gstd = random_standardized(10, 40, 4);
        let k = compute_grm(&gstd).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x = DVector::from_fn(10, |_, _| rng.random_range(-1.0..1.0));
            let q = (x.transpose() * &k * &x)[(0, 0)];
            assert!(q >= -1e-9 * x.norm_squared(), "negative quadratic form {q}");
        }
    }

    #[test]
    fn kd_all_equal_exposure_is_k() {
        let gstd = random_standardized(5, 10, 6);
        let k = compute_grm(&gstd).unwrap();
        let d = DVector::from_element(5, 1.0);
        let (kd, kind) = build_kd(&k, &d, None).unwrap();
        assert_eq!(kind, ExposureKind::Binary);
        assert_eq!(kd, k);
    }

    #[test]
    fn kd_opposite_exposure_zeroes_off_diagonal() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let d = DVector::from_vec(vec![0.0, 1.0]);
        let (kd, _) = build_kd(&k, &d, None).unwrap();
        assert_eq!(kd[(0, 1)], 0.0);
        assert_eq!(kd[(1, 0)], 0.0);
        assert_eq!(kd[(0, 0)], 1.0);
    }

    #[test]
    fn kd_continuous_matches_pairwise_oracle() {
        let gstd = random_standardized(5, 12, 7);
        let k = compute_grm(&gstd).unwrap();
        let d = DVector::from_vec(vec![0.3, 1.2, -0.5, 0.9, 0.0]);
        let (kd, kind) = build_kd(&k, &d, None).unwrap();
        assert_eq!(kind, ExposureKind::Continuous);
        let range = 1.2 - (-0.5);
        for i in 0..5 {
            for j in 0..5 {
                let expect = k[(i, j)] * (1.0 - (d[i] - d[j]).abs() / range);
                assert_relative_eq!(kd[(i, j)], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn kd_rejects_metric_outside_unit_interval() {
        let k = DMatrix::identity(2, 2);
        let d = DVector::from_vec(vec![0.0, 3.0]);
        let bad = |x: f64, y: f64| (x - y).abs();
        let r = build_kd(&k, &d, Some(&bad));
        assert!(r.is_err());
    }

    #[test]
    fn kd_binary_commutes_with_permutation() {
        let gstd = random_standardized(6, 15, 8);
        let k = compute_grm(&gstd).unwrap();
        let d = DVector::from_vec(vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0]);
        let (kd, _) = build_kd(&k, &d, None).unwrap();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let kp = k.select_rows(&perm).select_columns(&perm);
        let dp = DVector::from_fn(6, |i, _| d[perm[i]]);
        let (kd_p, _) = build_kd(&kp, &dp, None).unwrap();
        let kd_perm = kd.select_rows(&perm).select_columns(&perm);
        assert_relative_eq!((kd_p - kd_perm).abs().max(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn eigen_identity_cases() {
        let k = DMatrix::identity(4, 4);
        let kd = DMatrix::zeros(4, 4);
        let e = eigendecompose(&k, &kd, 2.0, 0.0, true).unwrap();
        for v in e.lambda.iter() {
            assert_relative_eq!(*v, 2.0, epsilon = 1e-12);
        }
        let recon = &e.u * DMatrix::from_diagonal(&e.lambda) * e.u.transpose();
        let diff: DMatrix<f64> = recon - DMatrix::identity(4, 4) * 2.0;
        assert_relative_eq!(diff.abs().max(), 0.0, epsilon = 1e-10);

        let e2 = eigendecompose(&kd, &k, 0.0, 1.0, true).unwrap();
        for v in e2.lambda.iter() {
            assert_relative_eq!(*v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn eigen_reconstructs_random_psd_pair() {
        let k = compute_grm(&random_standardized(8, 30, 9)).unwrap();
        let d = DVector::from_fn(8, |i, _| (i % 2) as f64);
        let (kd, _) = build_kd(&k, &d, None).unwrap();
        let (tg, td) = (0.7, 0.4);
        let e = eigendecompose(&k, &kd, tg, td, true).unwrap();
        let sigma = &k * tg + &kd * td + DMatrix::identity(8, 8) * e.ridge;
        let recon = &e.u * DMatrix::from_diagonal(&e.lambda) * e.u.transpose();
        assert!((recon - sigma).abs().max() <= 1e-10);
        // Orthonormality.
        let ortho = e.u.transpose() * &e.u - DMatrix::identity(8, 8);
        assert!(ortho.abs().max() <= 1e-8);
        // Sorted descending, positive.
        for i in 1..8 {
            assert!(e.lambda[i] <= e.lambda[i - 1]);
        }
        assert!(e.lambda[7] > 0.0);
    }

    #[test]
    fn eigen_ridge_repairs_semidefinite() {
        // Rank-1 covariance: needs a ridge.
        let v = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let k = &v * v.transpose();
        let kd = DMatrix::zeros(3, 3);
        let e = eigendecompose(&k, &kd, 1.0, 0.0, true).unwrap();
        assert!(e.ridge > 0.0);
        assert!(e.lambda.min() > 0.0);
        let strict = eigendecompose(&k, &kd, 1.0, 0.0, false);
        assert!(strict.is_err());
    }

    #[test]
    fn pcs_match_oracle_on_random_psd() {
        let gstd = random_standardized(7, 25, 10);
        let k = compute_grm(&gstd).unwrap();
        let pcs = top_pcs(&k, 3).unwrap();
        // Columns orthogonal, norms equal sqrt(eigenvalue), and each column
        // satisfies K v = lambda v after unscaling. Oracle: a raw symmetric
        // eigensolve without any ridge repair.
        let eig = k.clone().symmetric_eigen();
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for j in 0..3 {
            let col = pcs.column(j);
            assert_relative_eq!(col.norm(), vals[j].sqrt(), epsilon = 1e-8);
            let unscaled = col / vals[j].sqrt();
            let resid = &k * &unscaled - &unscaled * vals[j];
            assert!(resid.abs().max() < 1e-8 + 1e-8 * vals[j]);
            for l in 0..j {
                let dot = pcs.column(j).dot(&pcs.column(l));
                assert!(dot.abs() < 1e-8, "columns {j},{l} not orthogonal: {dot}");
            }
        }
        // Rank-1 case: first PC proportional to the generating vector.
        let v = DVector::from_vec(vec![3.0, -1.0, 2.0]);
        let k1 = &v * v.transpose();
        let p1 = top_pcs(&k1, 1).unwrap();
        let cosine = p1.column(0).dot(&v) / (p1.column(0).norm() * v.norm());
        assert_relative_eq!(cosine.abs(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn pcs_rejects_k_above_n() {
        let k = DMatrix::identity(3, 3);
        assert!(top_pcs(&k, 4).is_err());
    }
}
