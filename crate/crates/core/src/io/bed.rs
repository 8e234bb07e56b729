//! PLINK 1 binary genotype triplet (.bed/.bim/.fam) reader and writer.
//!
//! The .bed payload is variant-major: each variant occupies ceil(n/4) bytes,
//! four samples per byte, two bits per sample starting at the low bits.
//! Codes count copies of the .bim A1 allele: 00 -> 2, 01 -> missing,
//! 10 -> 1, 11 -> 0. Padding bits in the last byte of a variant are ignored.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const BED_MAGIC1: u8 = 0x6C;
pub const BED_MAGIC2: u8 = 0x1B;
pub const BED_MODE_VARIANT_MAJOR: u8 = 0x01;

/// One .bim row.
#[derive(Debug, Clone, PartialEq)]
pub struct BimRecord {
    pub chrom: String,
    pub id: String,
    pub cm: f64,
    pub pos: i64,
    pub a1: String,
    pub a2: String,
}

/// Validated paths plus the sample/variant metadata they declare.
#[derive(Debug, Clone)]
pub struct BedTriplet {
    pub bed_path: PathBuf,
    pub bim_path: PathBuf,
    pub fam_path: PathBuf,
    pub sample_ids: Vec<String>,
    pub variants: Vec<BimRecord>,
}

impl BedTriplet {
    /// Open `<prefix>.bed/.bim/.fam`.
    pub fn from_prefix<P: AsRef<Path>>(prefix: P) -> Result<Self> {
        let p = prefix.as_ref();
        Self::open(
            p.with_extension("bed"),
            p.with_extension("bim"),
            p.with_extension("fam"),
        )
    }

    /// Parse the .fam and .bim companions and validate the .bed header and
    /// length against them.
    pub fn open(bed_path: PathBuf, bim_path: PathBuf, fam_path: PathBuf) -> Result<Self> {
        let fam = fs::read_to_string(&fam_path)?;
        let mut sample_ids = Vec::new();
        for (ln, line) in fam.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() < 6 {
                return Err(Error::Format(format!(
                    "{}: line {} has {} columns, expected 6",
                    fam_path.display(),
                    ln + 1,
                    cols.len()
                )));
            }
            sample_ids.push(cols[1].to_string());
        }
        let bim = fs::read_to_string(&bim_path)?;
        let mut variants = Vec::new();
        for (ln, line) in bim.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() < 6 {
                return Err(Error::Format(format!(
                    "{}: line {} has {} columns, expected 6",
                    bim_path.display(),
                    ln + 1,
                    cols.len()
                )));
            }
            variants.push(BimRecord {
                chrom: cols[0].into(),
                id: cols[1].into(),
                cm: cols[2].parse().map_err(|_| {
                    Error::Format(format!("{}: line {}: bad cM value", bim_path.display(), ln + 1))
                })?,
                pos: cols[3].parse().map_err(|_| {
                    Error::Format(format!("{}: line {}: bad position", bim_path.display(), ln + 1))
                })?,
                a1: cols[4].into(),
                a2: cols[5].into(),
            });
        }

        let triplet = BedTriplet { bed_path, bim_path, fam_path, sample_ids, variants };
        triplet.validate_bed_header()?;
        Ok(triplet)
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_variants(&self) -> usize {
        self.variants.len()
    }

    fn bytes_per_variant(&self) -> usize {
        self.n_samples().div_ceil(4)
    }

    fn validate_bed_header(&self) -> Result<()> {
        let data = fs::read(&self.bed_path)?;
        if data.len() < 3 || data[0] != BED_MAGIC1 || data[1] != BED_MAGIC2 {
            return Err(Error::Format(format!(
                "{}: not a PLINK .bed file (bad magic)",
                self.bed_path.display()
            )));
        }
        if data[2] != BED_MODE_VARIANT_MAJOR {
            return Err(Error::Format(format!(
                "{}: only variant-major mode (0x01) is supported, found {:#04x}",
                self.bed_path.display(),
                data[2]
            )));
        }
        let expect = 3 + self.n_variants() * self.bytes_per_variant();
        if data.len() != expect {
            return Err(Error::Format(format!(
                "{}: expected {} bytes for {} samples x {} variants, found {}",
                self.bed_path.display(),
                expect,
                self.n_samples(),
                self.n_variants(),
                data.len()
            )));
        }
        Ok(())
    }

    /// Decode genotypes as counts of A1 copies; missing entries become NaN.
    /// `variant_subset` restricts (and orders) the columns. `count_a2`
    /// flips the orientation to count A2 copies instead.
    pub fn read_bed(
        &self,
        variant_subset: Option<&[usize]>,
        count_a2: bool,
    ) -> Result<DMatrix<f64>> {
        let data = fs::read(&self.bed_path)?;
        self.validate_bed_header()?;
        let n = self.n_samples();
        let bpv = self.bytes_per_variant();
        let columns: Vec<usize> = match variant_subset {
            Some(subset) => {
                for &j in subset {
                    if j >= self.n_variants() {
                        return Err(Error::InvalidArgument(format!(
                            "variant index {} out of range (p = {})",
                            j,
                            self.n_variants()
                        )));
                    }
                }
                subset.to_vec()
            }
            None => (0..self.n_variants()).collect(),
        };
        let mut g = DMatrix::zeros(n, columns.len());
        for (out_j, &j) in columns.iter().enumerate() {
            let block = &data[3 + j * bpv..3 + (j + 1) * bpv];
            for i in 0..n {
                let code = (block[i / 4] >> (2 * (i % 4))) & 0b11;
                let value = match code {
                    0b00 => 2.0,
                    0b01 => f64::NAN,
                    0b10 => 1.0,
                    _ => 0.0,
                };
                g[(i, out_j)] = if count_a2 && !value.is_nan() { 2.0 - value } else { value };
            }
        }
        Ok(g)
    }
}

/// Encode a genotype matrix (A1 dosages in {0,1,2}, NaN missing) as a .bed
/// payload with zeroed padding bits.
pub fn encode_bed(g: &DMatrix<f64>) -> Result<Vec<u8>> {
    let (n, p) = (g.nrows(), g.ncols());
    let bpv = n.div_ceil(4);
    let mut out = vec![BED_MAGIC1, BED_MAGIC2, BED_MODE_VARIANT_MAJOR];
    out.reserve(p * bpv);
    for j in 0..p {
        let mut block = vec![0u8; bpv];
        for i in 0..n {
            let v = g[(i, j)];
            let code: u8 = if v.is_nan() {
                0b01
            } else if v == 2.0 {
                0b00
            } else if v == 1.0 {
                0b10
            } else if v == 0.0 {
                0b11
            } else {
                return Err(Error::Data(format!(
                    "genotype ({i},{j}) = {v} is not encodable (expected 0/1/2/missing)"
                )));
            };
            block[i / 4] |= code << (2 * (i % 4));
        }
        out.extend_from_slice(&block);
    }
    Ok(out)
}

/// Write a full triplet; variant metadata is synthesized when not supplied.
pub fn write_plink<P: AsRef<Path>>(
    prefix: P,
    g: &DMatrix<f64>,
    sample_ids: &[String],
    variants: Option<&[BimRecord]>,
) -> Result<()> {
    let (n, p) = (g.nrows(), g.ncols());
    if sample_ids.len() != n {
        return Err(Error::Dimension(format!(
            "{} sample ids for {} genotype rows",
            sample_ids.len(),
            n
        )));
    }
    let prefix = prefix.as_ref();
    fs::write(prefix.with_extension("bed"), encode_bed(g)?)?;
    let mut fam = String::new();
    for id in sample_ids {
        fam.push_str(&format!("{id} {id} 0 0 0 -9\n"));
    }
    fs::write(prefix.with_extension("fam"), fam)?;
    let mut bim = String::new();
    match variants {
        Some(recs) => {
            if recs.len() != p {
                return Err(Error::Dimension(format!(
                    "{} variant records for {} genotype columns",
                    recs.len(),
                    p
                )));
            }
            for r in recs {
                bim.push_str(&format!(
                    "{} {} {} {} {} {}\n",
                    r.chrom, r.id, r.cm, r.pos, r.a1, r.a2
                ));
            }
        }
        None => {
            for j in 0..p {
                bim.push_str(&format!("1 v{j} 0 {} A B\n", j + 1));
            }
        }
    }
    fs::write(prefix.with_extension("bim"), bim)?;
    Ok(())
}
