//! Core typed containers: samples, variants, coefficient blocks and model
//! families shared by every other module.
//!
//! A [`Dataset`] holds the response `y`, covariates `Z` (first column is the
//! intercept and is never penalized), the environmental exposure `D`, and the
//! genotype matrix `G` with entries counting copies of the minor allele.
//! Missing genotypes are encoded as `NaN` until [`impute_missing`] runs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Exponential-family response distribution with its canonical link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Bernoulli response, logit link, variance mu*(1-mu).
    Binomial,
    /// Normal response, identity link, unit variance function.
    Gaussian,
}

impl Family {
    /// Canonical link g(mu).
    pub fn link(&self, mu: f64) -> f64 {
        match self {
            Family::Binomial => (mu / (1.0 - mu)).ln(),
            Family::Gaussian => mu,
        }
    }

    /// Inverse link g^{-1}(eta).
    pub fn inv_link(&self, eta: f64) -> f64 {
        match self {
            Family::Binomial => 1.0 / (1.0 + (-eta).exp()),
            Family::Gaussian => eta,
        }
    }

    /// Link derivative g'(mu).
    pub fn dlink(&self, mu: f64) -> f64 {
        match self {
            Family::Binomial => 1.0 / (mu * (1.0 - mu)),
            Family::Gaussian => 1.0,
        }
    }

    /// Variance function nu(mu).
    pub fn variance(&self, mu: f64) -> f64 {
        match self {
            Family::Binomial => mu * (1.0 - mu),
            Family::Gaussian => 1.0,
        }
    }

    /// Whether the dispersion parameter is fixed at 1 by default.
    pub fn dispersion_fixed(&self) -> bool {
        matches!(self, Family::Binomial)
    }
}

/// Family plus per-observation prior weights and the dispersion policy.
#[derive(Debug, Clone)]
pub struct FamilyLink {
    pub family: Family,
    /// Prior weights a_i; `None` means all ones.
    pub prior_weights: Option<DVector<f64>>,
    /// Estimate the dispersion phi. Defaults to false for binomial
    /// (phi fixed at 1) and true for gaussian.
    pub estimate_dispersion: bool,
}

impl FamilyLink {
    pub fn new(family: Family) -> Self {
        FamilyLink {
            family,
            prior_weights: None,
            estimate_dispersion: !family.dispersion_fixed(),
        }
    }

    /// Prior weight a_i for observation i.
    pub fn prior_weight(&self, i: usize) -> f64 {
        self.prior_weights.as_ref().map_or(1.0, |a| a[i])
    }
}

/// Bound on mu for binomial weight evaluation; prevents infinite working
/// weights at separation.
pub const MU_EPS: f64 = 1e-10;

/// Clamp a binomial mean into (0, 1).
pub fn clamp_mu(family: Family, mu: f64) -> f64 {
    match family {
        Family::Binomial => mu.clamp(MU_EPS, 1.0 - MU_EPS),
        Family::Gaussian => mu,
    }
}

/// Quasi-likelihood contribution ql_i at phi = 1: the Bernoulli
/// log-likelihood for binomial, -(y-mu)^2/2 for gaussian.
pub fn quasi_loglik(family: Family, y: f64, mu: f64) -> f64 {
    let mu = clamp_mu(family, mu);
    match family {
        Family::Binomial => y * mu.ln() + (1.0 - y) * (1.0 - mu).ln(),
        Family::Gaussian => -0.5 * (y - mu) * (y - mu),
    }
}

/// Aligned phenotype, covariate, exposure and genotype data for n samples.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Response of length n (0/1 for binomial).
    pub y: DVector<f64>,
    /// n x m covariate matrix; column 0 is the intercept.
    pub z: DMatrix<f64>,
    /// Exposure vector of length n.
    pub d: DVector<f64>,
    /// n x p genotype matrix; entries in {0,1,2} or NaN when missing.
    pub g: DMatrix<f64>,
    pub sample_ids: Vec<String>,
    pub variant_ids: Vec<String>,
}

impl Dataset {
    pub fn new(
        y: DVector<f64>,
        z: DMatrix<f64>,
        d: DVector<f64>,
        g: DMatrix<f64>,
        sample_ids: Vec<String>,
        variant_ids: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if z.nrows() != n || d.len() != n || g.nrows() != n || sample_ids.len() != n {
            return Err(Error::Dimension(format!(
                "row dimensions disagree: y={} Z={} D={} G={} ids={}",
                n,
                z.nrows(),
                d.len(),
                g.nrows(),
                sample_ids.len()
            )));
        }
        if g.ncols() != variant_ids.len() {
            return Err(Error::Dimension(format!(
                "G has {} columns but {} variant ids",
                g.ncols(),
                variant_ids.len()
            )));
        }
        Ok(Dataset { y, z, d, g, sample_ids, variant_ids })
    }

    pub fn n_samples(&self) -> usize {
        self.y.len()
    }

    pub fn n_variants(&self) -> usize {
        self.g.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.z.ncols()
    }

    /// Checks run before fitting: finite entries, binary response for the
    /// binomial family, full-rank covariates.
    pub fn validate_for_fit(&self, family: Family) -> Result<()> {
        if self.g.iter().any(|v| v.is_nan()) {
            return Err(Error::Data(
                "genotype matrix contains missing values; run impute_missing first".into(),
            ));
        }
        if family == Family::Binomial && self.y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data("binomial response must be 0/1".into()));
        }
        // Rank check on Z via singular values.
        let svd = self.z.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let tol = smax * 1e-10 * (self.z.nrows().max(self.z.ncols()) as f64);
        let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
        if rank < self.z.ncols() {
            return Err(Error::Data(format!(
                "covariate matrix is rank deficient (rank {} < {} columns)",
                rank,
                self.z.ncols()
            )));
        }
        Ok(())
    }
}

/// Fitted coefficient blocks: unpenalized covariate effects `theta`
/// (intercept first), unpenalized exposure effect `alpha`, genetic main
/// effects `beta` and GEI effects `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub theta: DVector<f64>,
    pub alpha: f64,
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
}

impl Coefficients {
    pub fn zeros(m: usize, p: usize) -> Self {
        Coefficients {
            theta: DVector::zeros(m),
            alpha: 0.0,
            beta: DVector::zeros(p),
            gamma: DVector::zeros(p),
        }
    }

    /// Counts of exact zeros/non-zeros in the penalized blocks.
    pub fn sparsity_report(&self) -> SparsityReport {
        SparsityReport {
            nonzero_beta: self.beta.iter().filter(|&&b| b != 0.0).count(),
            nonzero_gamma: self.gamma.iter().filter(|&&g| g != 0.0).count(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
            && self.alpha.is_finite()
            && self.beta.iter().all(|v| v.is_finite())
            && self.gamma.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SparsityReport {
    pub nonzero_beta: usize,
    pub nonzero_gamma: usize,
}

/// Result of genotype standardization: the transformed matrix and the minor
/// allele frequencies that were used.
#[derive(Debug, Clone)]
pub struct Standardized {
    pub matrix: DMatrix<f64>,
    pub mafs: Vec<f64>,
}

/// Standardize genotype columns to g~_ij = (g_ij - 2 p_j) / sqrt(2 p_j (1 - p_j)),
/// where p_j is the per-variant minor allele frequency.
///
/// When `freqs` is `None` the MAF is estimated as (column sum) / (2 * n_observed).
/// Monomorphic variants (p_j in {0, 1}) are rejected.
pub fn standardize_genotypes(g: &DMatrix<f64>, freqs: Option<&[f64]>) -> Result<Standardized> {
    let (n, p) = (g.nrows(), g.ncols());
    if let Some(f) = freqs {
        if f.len() != p {
            return Err(Error::Dimension(format!(
                "{} frequencies supplied for {} variants",
                f.len(),
                p
            )));
        }
    }
    let mut out = DMatrix::zeros(n, p);
    let mut mafs = Vec::with_capacity(p);
    for j in 0..p {
        let pj = match freqs {
            Some(f) => f[j],
            None => {
                let mut sum = 0.0;
                let mut n_obs = 0usize;
                for i in 0..n {
                    let v = g[(i, j)];
                    if !v.is_nan() {
                        sum += v;
                        n_obs += 1;
                    }
                }
                if n_obs == 0 {
                    return Err(Error::Data(format!("variant {j} has no observed genotypes")));
                }
                sum / (2.0 * n_obs as f64)
            }
        };
        if pj <= 0.0 || pj >= 1.0 {
            return Err(Error::Data(format!(
                "variant {j} is monomorphic (allele frequency {pj})"
            )));
        }
        let scale = (2.0 * pj * (1.0 - pj)).sqrt();
        for i in 0..n {
            out[(i, j)] = (g[(i, j)] - 2.0 * pj) / scale;
        }
        mafs.push(pj);
    }
    Ok(Standardized { matrix: out, mafs })
}

/// Replace each missing (NaN) genotype by the column mean of observed
/// entries; observed entries are preserved bit-exactly. Returns the
/// per-variant count of imputed entries.
pub fn impute_missing(g: &mut DMatrix<f64>) -> Result<Vec<usize>> {
    let (n, p) = (g.nrows(), g.ncols());
    let mut counts = Vec::with_capacity(p);
    for j in 0..p {
        let mut sum = 0.0;
        let mut n_obs = 0usize;
        for i in 0..n {
            let v = g[(i, j)];
            if !v.is_nan() {
                sum += v;
                n_obs += 1;
            }
        }
        let n_missing = n - n_obs;
        if n_obs == 0 {
            return Err(Error::Data(format!("variant {j} has all genotypes missing")));
        }
        if n_missing > 0 {
            let mean = sum / n_obs as f64;
            for i in 0..n {
                if g[(i, j)].is_nan() {
                    g[(i, j)] = mean;
                }
            }
        }
        counts.push(n_missing);
    }
    Ok(counts)
}
