//! Shared input loading: PLINK triplet, phenotype/covariate tables, design
//! assembly, kinship construction with caching.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};

use pqlgei_core::data::{impute_missing, standardize_genotypes, Dataset, Family, FamilyLink};
use pqlgei_core::io::{load_kinship, save_kinship, BedTriplet, ContentHasher, Table};
use pqlgei_core::kinship::{build_kinship_pair, eigendecompose, CovarianceEigen, KinshipPair};

use crate::InputArgs;

pub struct Prepared {
    pub ds: Dataset,
    pub kin: KinshipPair,
    pub family: FamilyLink,
    pub mafs: Vec<f64>,
    pub covar_names: Vec<String>,
    pub exposure_name: String,
    /// Content hash over (standardized panel, exposure, orientation).
    pub kinship_hash: u64,
    /// True when the kinship pair came from a cache file.
    pub kinship_cached: bool,
}

pub fn resolve_triplet(input: &InputArgs) -> Result<BedTriplet> {
    if let Some(prefix) = &input.bfile {
        return Ok(BedTriplet::from_prefix(prefix)?);
    }
    match (&input.bed, &input.bim, &input.fam) {
        (Some(bed), Some(bim), Some(fam)) => {
            Ok(BedTriplet::open(bed.clone(), bim.clone(), fam.clone())?)
        }
        _ => bail!("genotypes required: pass --bfile PREFIX or all of --bed/--bim/--fam"),
    }
}

pub fn parse_family(input: &InputArgs) -> Result<FamilyLink> {
    let family = match input.family.as_str() {
        "binomial" => Family::Binomial,
        "gaussian" => Family::Gaussian,
        other => bail!("unknown family '{other}' (expected binomial or gaussian)"),
    };
    let mut link = FamilyLink::new(family);
    if input.phi_estimate {
        link.estimate_dispersion = true;
    }
    Ok(link)
}

fn table_for<'a>(
    pheno: &'a Table,
    covar: Option<&'a Table>,
    column: &str,
) -> Result<&'a Table> {
    if let Some(c) = covar {
        if c.column_index(column).is_ok() {
            return Ok(c);
        }
    }
    if pheno.column_index(column).is_ok() {
        return Ok(pheno);
    }
    bail!("column '{column}' not found in the phenotype or covariate table")
}

/// Load and align everything needed for a fit.
pub fn load(input: &InputArgs, kinship_cache: Option<&PathBuf>, no_cache: bool) -> Result<Prepared> {
    let triplet = resolve_triplet(input)?;
    let mut g = triplet.read_bed(None, input.count_a2)?;
    let missing = impute_missing(&mut g)?;
    let n_imputed: usize = missing.iter().sum();
    if n_imputed > 0 {
        eprintln!("imputed {n_imputed} missing genotypes (column means)");
    }
    let standardized = standardize_genotypes(&g, None)?;
    let gstd = standardized.matrix;
    let mafs = standardized.mafs;

    let pheno_path = input
        .pheno
        .as_ref()
        .context("--pheno is required for this command")?;
    let pheno = Table::read(pheno_path)?;
    let covar = input.covar.as_ref().map(Table::read).transpose()?;

    let order = pheno.align(&input.id_col, &triplet.sample_ids)?;
    let y = pheno.numeric_column(&input.pheno_col, &order)?;

    let exposure_name = input
        .exposure
        .clone()
        .context("--exposure is required for this command")?;
    let exp_table = table_for(&pheno, covar.as_ref(), &exposure_name)?;
    let exp_order = exp_table.align(&input.id_col, &triplet.sample_ids)?;
    let d = exp_table.numeric_column(&exposure_name, &exp_order)?;

    let n = triplet.n_samples();
    let mut z = DMatrix::zeros(n, 1 + input.covar_cols.len());
    z.column_mut(0).fill(1.0);
    for (c, name) in input.covar_cols.iter().enumerate() {
        let t = table_for(&pheno, covar.as_ref(), name)?;
        let ord = t.align(&input.id_col, &triplet.sample_ids)?;
        z.set_column(c + 1, &t.numeric_column(name, &ord)?);
    }

    let ds = Dataset::new(
        y,
        z,
        d.clone(),
        gstd.clone(),
        triplet.sample_ids.clone(),
        triplet.variants.iter().map(|v| v.id.clone()).collect(),
    )?;

    let kinship_hash = kinship_input_hash(&gstd, &d, input.count_a2);
    let (kin, kinship_cached) = obtain_kinship(&gstd, &d, kinship_hash, kinship_cache, no_cache)?;

    Ok(Prepared {
        ds,
        kin,
        family: parse_family(input)?,
        mafs,
        covar_names: input.covar_cols.clone(),
        exposure_name,
        kinship_hash,
        kinship_cached,
    })
}

pub fn kinship_input_hash(gstd: &DMatrix<f64>, d: &DVector<f64>, count_a2: bool) -> u64 {
    let mut h = ContentHasher::new();
    h.update(&(gstd.nrows() as u64).to_le_bytes());
    h.update(&(gstd.ncols() as u64).to_le_bytes());
    h.update_f64s(gstd.iter());
    h.update_f64s(d.iter());
    h.update(&[count_a2 as u8]);
    h.finish()
}

fn obtain_kinship(
    gstd: &DMatrix<f64>,
    d: &DVector<f64>,
    hash: u64,
    cache: Option<&PathBuf>,
    no_cache: bool,
) -> Result<(KinshipPair, bool)> {
    if let Some(path) = cache {
        if !no_cache && path.exists() {
            let (kin, stored) = load_kinship(path)?;
            if stored == hash && kin.n() == gstd.nrows() {
                return Ok((kin, true));
            }
            eprintln!(
                "kinship cache {} does not match the inputs; recomputing",
                path.display()
            );
        }
    }
    let kin = build_kinship_pair(gstd, d, None)?;
    if let Some(path) = cache {
        save_kinship(path, &kin, hash)?;
    }
    Ok((kin, false))
}

/// Eigendecomposition with an optional content-hash-keyed cache.
pub fn eigen_with_cache(
    kin: &KinshipPair,
    kinship_hash: u64,
    tau_g: f64,
    tau_d: f64,
    cache: Option<&PathBuf>,
) -> Result<CovarianceEigen> {
    let mut h = ContentHasher::new();
    h.update(&kinship_hash.to_le_bytes());
    h.update_f64s([tau_g, tau_d].iter());
    let key = h.finish();
    if let Some(path) = cache {
        if path.exists() {
            let (eigen, stored) = pqlgei_core::io::load_eigen(path)?;
            if stored == key && eigen.u.nrows() == kin.n() {
                eprintln!("reusing eigendecomposition cache {}", path.display());
                return Ok(eigen);
            }
        }
    }
    let eigen = eigendecompose(&kin.k, &kin.kd, tau_g, tau_d, true)?;
    if eigen.ridge > 0.0 {
        eprintln!("ridge repair applied to the random-effect covariance: {:.3e}", eigen.ridge);
    }
    if let Some(path) = cache {
        pqlgei_core::io::save_eigen(path, &eigen, key)?;
    }
    Ok(eigen)
}
