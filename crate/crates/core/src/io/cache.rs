//! Binary caches keyed by content hashes: kinship pairs, eigendecomposition
//! reuse, and the fitted-model file consumed by the predict command.
//!
//! All files are little-endian with a 4-byte magic and a u32 version.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::data::{Coefficients, Family};
use crate::error::{Error, Result};
use crate::kinship::{CovarianceEigen, ExposureKind, KinshipPair};

const KIN_MAGIC: &[u8; 4] = b"PQK1";
const EIG_MAGIC: &[u8; 4] = b"PQE1";
const MODEL_MAGIC: &[u8; 4] = b"PQM1";
const VERSION: u32 = 1;

/// FNV-1a over a byte stream; stable across platforms and runs.
#[derive(Debug, Clone)]
pub struct ContentHasher {
    state: u64,
}

impl Default for ContentHasher {
    fn default() -> Self {
        Self::new()
    }
}

impl ContentHasher {
    pub fn new() -> Self {
        ContentHasher { state: 0xcbf2_9ce4_8422_2325 }
    }

    pub fn update(&mut self, bytes: &[u8]) -> &mut Self {
        for &b in bytes {
            self.state ^= b as u64;
            self.state = self.state.wrapping_mul(0x0000_0100_0000_01b3);
        }
        self
    }

    pub fn update_f64s<'a>(&mut self, values: impl IntoIterator<Item = &'a f64>) -> &mut Self {
        for v in values {
            self.update(&v.to_le_bytes());
        }
        self
    }

    pub fn finish(&self) -> u64 {
        self.state
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(magic: &[u8; 4]) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        Writer { buf }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn vector(&mut self, v: &DVector<f64>) {
        self.u64(v.len() as u64);
        for x in v.iter() {
            self.f64(*x);
        }
    }
    fn matrix(&mut self, m: &DMatrix<f64>) {
        self.u64(m.nrows() as u64);
        self.u64(m.ncols() as u64);
        for x in m.iter() {
            self.f64(*x);
        }
    }
    fn string(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn strings(&mut self, ss: &[String]) {
        self.u64(ss.len() as u64);
        for s in ss {
            self.string(s);
        }
    }
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8], magic: &[u8; 4], what: &str) -> Result<Self> {
        if data.len() < 8 || &data[..4] != magic {
            return Err(Error::Format(format!("{what}: bad magic bytes")));
        }
        let version = u32::from_le_bytes(data[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("{what}: unsupported version {version}")));
        }
        let mut cur = Cursor::new(data);
        cur.set_position(8);
        Ok(Reader { cur })
    }
    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.cur.read_exact(&mut b).map_err(|_| Error::Format("truncated cache file".into()))?;
        Ok(b[0])
    }
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.cur.read_exact(&mut b).map_err(|_| Error::Format("truncated cache file".into()))?;
        Ok(u64::from_le_bytes(b))
    }
    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.cur.read_exact(&mut b).map_err(|_| Error::Format("truncated cache file".into()))?;
        Ok(f64::from_le_bytes(b))
    }
    fn vector(&mut self) -> Result<DVector<f64>> {
        let n = self.u64()? as usize;
        let mut v = DVector::zeros(n);
        for i in 0..n {
            v[i] = self.f64()?;
        }
        Ok(v)
    }
    fn matrix(&mut self) -> Result<DMatrix<f64>> {
        let r = self.u64()? as usize;
        let c = self.u64()? as usize;
        let mut m = DMatrix::zeros(r, c);
        for idx in 0..r * c {
            m[idx] = self.f64()?;
        }
        Ok(m)
    }
    fn string(&mut self) -> Result<String> {
        let len = self.u64()? as usize;
        let mut b = vec![0u8; len];
        self.cur.read_exact(&mut b).map_err(|_| Error::Format("truncated cache file".into()))?;
        String::from_utf8(b).map_err(|_| Error::Format("invalid utf8 in cache file".into()))
    }
    fn strings(&mut self) -> Result<Vec<String>> {
        let n = self.u64()? as usize;
        (0..n).map(|_| self.string()).collect()
    }
}

fn exposure_code(e: ExposureKind) -> u8 {
    match e {
        ExposureKind::Binary => 0,
        ExposureKind::Continuous => 1,
    }
}

fn exposure_from(code: u8) -> Result<ExposureKind> {
    match code {
        0 => Ok(ExposureKind::Binary),
        1 => Ok(ExposureKind::Continuous),
        other => Err(Error::Format(format!("unknown exposure code {other}"))),
    }
}

fn family_code(f: Family) -> u8 {
    match f {
        Family::Binomial => 0,
        Family::Gaussian => 1,
    }
}

fn family_from(code: u8) -> Result<Family> {
    match code {
        0 => Ok(Family::Binomial),
        1 => Ok(Family::Gaussian),
        other => Err(Error::Format(format!("unknown family code {other}"))),
    }
}

/// Save a kinship pair keyed by an input content hash.
pub fn save_kinship<P: AsRef<Path>>(path: P, kin: &KinshipPair, input_hash: u64) -> Result<()> {
    let mut w = Writer::new(KIN_MAGIC);
    w.u64(input_hash);
    w.u64(kin.q as u64);
    w.u8(exposure_code(kin.exposure));
    w.matrix(&kin.k);
    w.matrix(&kin.kd);
    let mut f = fs::File::create(path)?;
    f.write_all(&w.buf)?;
    Ok(())
}

/// Load a kinship pair and the hash it was keyed by.
pub fn load_kinship<P: AsRef<Path>>(path: P) -> Result<(KinshipPair, u64)> {
    let data = fs::read(path)?;
    let mut r = Reader::new(&data, KIN_MAGIC, "kinship cache")?;
    let hash = r.u64()?;
    let q = r.u64()? as usize;
    let exposure = exposure_from(r.u8()?)?;
    let k = r.matrix()?;
    let kd = r.matrix()?;
    Ok((KinshipPair::new(k, kd, q, exposure), hash))
}

/// Save an eigendecomposition keyed by an input content hash.
pub fn save_eigen<P: AsRef<Path>>(path: P, eigen: &CovarianceEigen, input_hash: u64) -> Result<()> {
    let mut w = Writer::new(EIG_MAGIC);
    w.u64(input_hash);
    w.f64(eigen.ridge);
    w.vector(&eigen.lambda);
    w.matrix(&eigen.u);
    let mut f = fs::File::create(path)?;
    f.write_all(&w.buf)?;
    Ok(())
}

pub fn load_eigen<P: AsRef<Path>>(path: P) -> Result<(CovarianceEigen, u64)> {
    let data = fs::read(path)?;
    let mut r = Reader::new(&data, EIG_MAGIC, "eigendecomposition cache")?;
    let hash = r.u64()?;
    let ridge = r.f64()?;
    let lambda = r.vector()?;
    let u = r.matrix()?;
    Ok((CovarianceEigen { u, lambda, ridge }, hash))
}

/// Everything the predict command needs from a fitted grid point.
#[derive(Debug, Clone)]
pub struct ModelFile {
    pub family: Family,
    pub exposure: ExposureKind,
    pub tau_g: f64,
    pub tau_d: f64,
    pub phi: f64,
    pub lambda: f64,
    pub rho: f64,
    pub coef: Coefficients,
    /// Training working weights, working response and fixed-effect
    /// predictor at the selected grid point.
    pub w: DVector<f64>,
    pub ytilde: DVector<f64>,
    pub xtheta_train: DVector<f64>,
    pub d_train: DVector<f64>,
    pub train_sample_ids: Vec<String>,
    pub variant_ids: Vec<String>,
    /// Training MAFs used to standardize the genotype panel.
    pub mafs: Vec<f64>,
    /// Covariate column names after the intercept.
    pub covar_names: Vec<String>,
    pub exposure_name: String,
}

pub fn save_model<P: AsRef<Path>>(path: P, m: &ModelFile) -> Result<()> {
    let mut w = Writer::new(MODEL_MAGIC);
    w.u8(family_code(m.family));
    w.u8(exposure_code(m.exposure));
    w.f64(m.tau_g);
    w.f64(m.tau_d);
    w.f64(m.phi);
    w.f64(m.lambda);
    w.f64(m.rho);
    w.vector(&m.coef.theta);
    w.f64(m.coef.alpha);
    w.vector(&m.coef.beta);
    w.vector(&m.coef.gamma);
    w.vector(&m.w);
    w.vector(&m.ytilde);
    w.vector(&m.xtheta_train);
    w.vector(&m.d_train);
    w.strings(&m.train_sample_ids);
    w.strings(&m.variant_ids);
    w.u64(m.mafs.len() as u64);
    for v in &m.mafs {
        w.f64(*v);
    }
    w.strings(&m.covar_names);
    w.string(&m.exposure_name);
    let mut f = fs::File::create(path)?;
    f.write_all(&w.buf)?;
    Ok(())
}

pub fn load_model<P: AsRef<Path>>(path: P) -> Result<ModelFile> {
    let data = fs::read(path)?;
    let mut r = Reader::new(&data, MODEL_MAGIC, "model file")?;
    let family = family_from(r.u8()?)?;
    let exposure = exposure_from(r.u8()?)?;
    let tau_g = r.f64()?;
    let tau_d = r.f64()?;
    let phi = r.f64()?;
    let lambda = r.f64()?;
    let rho = r.f64()?;
    let theta = r.vector()?;
    let alpha = r.f64()?;
    let beta = r.vector()?;
    let gamma = r.vector()?;
    let w = r.vector()?;
    let ytilde = r.vector()?;
    let xtheta_train = r.vector()?;
    let d_train = r.vector()?;
    let train_sample_ids = r.strings()?;
    let variant_ids = r.strings()?;
    let n_maf = r.u64()? as usize;
    let mut mafs = Vec::with_capacity(n_maf);
    for _ in 0..n_maf {
        mafs.push(r.f64()?);
    }
    let covar_names = r.strings()?;
    let exposure_name = r.string()?;
    Ok(ModelFile {
        family,
        exposure,
        tau_g,
        tau_d,
        phi,
        lambda,
        rho,
        coef: Coefficients { theta, alpha, beta, gamma },
        w,
        ytilde,
        xtheta_train,
        d_train,
        train_sample_ids,
        variant_ids,
        mafs,
        covar_names,
        exposure_name,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hasher_is_stable_and_input_sensitive() {
        let mut h1 = ContentHasher::new();
        h1.update(b"abc").update_f64s(&[1.0, 2.0]);
        let mut h2 = ContentHasher::new();
        h2.update(b"abc").update_f64s(&[1.0, 2.0]);
        assert_eq!(h1.finish(), h2.finish());
        let mut h3 = ContentHasher::new();
        h3.update(b"abc").update_f64s(&[1.0, 2.5]);
        assert_ne!(h1.finish(), h3.finish());
    }

    #[test]
    fn kinship_cache_roundtrip() {
        let dir = std::env::temp_dir().join("pqlgei_cache_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("kin.bin");
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.25, 0.25, 1.0]);
        let kd = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let kin = KinshipPair::new(k, kd, 42, ExposureKind::Binary);
        save_kinship(&path, &kin, 0xdead_beef).unwrap();
        let (loaded, hash) = load_kinship(&path).unwrap();
        assert_eq!(hash, 0xdead_beef);
        assert_eq!(loaded.q, 42);
        assert_eq!(loaded.k, kin.k);
        assert_eq!(loaded.kd, kin.kd);
    }

    #[test]
    fn model_roundtrip() {
        let dir = std::env::temp_dir().join("pqlgei_cache_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.bin");
        let mut coef = Coefficients::zeros(2, 3);
        coef.alpha = -0.5;
        coef.beta[2] = 1.25;
        let m = ModelFile {
            family: Family::Binomial,
            exposure: ExposureKind::Binary,
            tau_g: 0.4,
            tau_d: 0.2,
            phi: 1.0,
            lambda: 0.33,
            rho: 0.5,
            coef,
            w: DVector::from_vec(vec![0.2, 0.3]),
            ytilde: DVector::from_vec(vec![1.0, -1.0]),
            xtheta_train: DVector::from_vec(vec![0.1, 0.9]),
            d_train: DVector::from_vec(vec![0.0, 1.0]),
            train_sample_ids: vec!["a".into(), "b".into()],
            variant_ids: vec!["v0".into(), "v1".into(), "v2".into()],
            mafs: vec![0.1, 0.2, 0.3],
            covar_names: vec!["age".into()],
            exposure_name: "sex".into(),
        };
        save_model(&path, &m).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.coef, m.coef);
        assert_eq!(back.train_sample_ids, m.train_sample_ids);
        assert_eq!(back.mafs, m.mafs);
        assert_eq!(back.lambda, m.lambda);
    }
}
