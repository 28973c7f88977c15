//! CSV schemas, dense-matrix export and run manifests.
//!
//! Floats are written in Rust's shortest round-trip form, so identical
//! results give byte-identical files.

use crate::greens_weyl::{MFunctionSample, WeylCircle};
use crate::spectral_estimator::{PointMass, SpectralEstimate};
use crate::transfer_engine::TransferMatrix;
use crate::{CMat, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serializes rows to CSV with a header line; returns the file's SHA-256.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    fs::write(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

/// Writes a header-only CSV when there are no rows.
pub fn write_csv_with_header<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<String> {
    if rows.is_empty() {
        let bytes = format!("{}\n", header.join(","));
        fs::write(path, &bytes)?;
        return Ok(sha256_hex(bytes.as_bytes()));
    }
    write_csv(path, rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct DensityRow {
    pub lambda: f64,
    pub density: f64,
    pub is_masked: bool,
    pub window_lo: i64,
    pub window_hi: i64,
}

pub const DENSITY_HEADER: &[&str] = &["lambda", "density", "is_masked", "window_lo", "window_hi"];

pub fn density_rows(est: &SpectralEstimate) -> Vec<DensityRow> {
    est.grid
        .iter()
        .zip(&est.density)
        .zip(&est.masked)
        .map(|((&lambda, &density), &is_masked)| DensityRow {
            lambda,
            density,
            is_masked,
            window_lo: est.window.0,
            window_hi: est.window.1,
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct PointMassRow {
    pub lambda: f64,
    pub weight: f64,
    pub shell_l: Option<i64>,
    pub shell_m: Option<i64>,
    pub case_tag: Option<String>,
}

pub const POINT_MASS_HEADER: &[&str] = &["lambda", "weight", "shell_l", "shell_m", "case_tag"];

pub fn point_mass_rows(masses: &[PointMass]) -> Vec<PointMassRow> {
    masses
        .iter()
        .map(|p| PointMassRow {
            lambda: p.lambda,
            weight: p.weight,
            shell_l: p.shell_l,
            shell_m: p.shell_m,
            case_tag: p.case_tag.clone(),
        })
        .collect()
}

/// One transfer matrix; entries are `value()` (scale applied).
#[derive(Debug, Clone, Serialize)]
pub struct TransferRow {
    pub re_z: f64,
    pub im_z: f64,
    pub n: i64,
    pub t11_re: f64,
    pub t11_im: f64,
    pub t12_re: f64,
    pub t12_im: f64,
    pub t21_re: f64,
    pub t21_im: f64,
    pub t22_re: f64,
    pub t22_im: f64,
    pub log_scale: f64,
    pub det_re: f64,
    pub det_im: f64,
}

/// Row for `t`, keyed by the far end of its range. The entries are those of
/// the normalized matrix `m`; the product is `e^{log_scale}·m`.
pub fn transfer_row(t: &TransferMatrix) -> TransferRow {
    let m = &t.m;
    let det = t.det();
    TransferRow {
        re_z: t.z.re,
        im_z: t.z.im,
        n: t.range.1,
        t11_re: m[(0, 0)].re,
        t11_im: m[(0, 0)].im,
        t12_re: m[(0, 1)].re,
        t12_im: m[(0, 1)].im,
        t21_re: m[(1, 0)].re,
        t21_im: m[(1, 0)].im,
        t22_re: m[(1, 1)].re,
        t22_im: m[(1, 1)].im,
        log_scale: t.log_scale,
        det_re: det.re,
        det_im: det.im,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MSweepRow {
    pub re_z: f64,
    pub im_z: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub c_re: f64,
    pub c_im: f64,
    pub m_re: f64,
    pub m_im: f64,
    pub method: String,
}

pub fn m_sweep_row(s: &MFunctionSample) -> MSweepRow {
    MSweepRow {
        re_z: s.z.re,
        im_z: s.z.im,
        n: s.n,
        c_re: s.c.re,
        c_im: s.c.im,
        m_re: s.value.re,
        m_im: s.value.im,
        method: s.method.to_string(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WeylRow {
    pub n: i64,
    pub radius: f64,
    pub center_re: f64,
    pub center_im: f64,
}

pub fn weyl_row(c: &WeylCircle) -> WeylRow {
    WeylRow { n: c.n, radius: c.radius, center_re: c.center.re, center_im: c.center.im }
}

/// Dense matrix as CSV: one line per row, each entry as a `re,im` pair.
pub fn write_dense_csv(path: &Path, m: &CMat) -> Result<String> {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let line: Vec<String> = (0..m.ncols()).map(|j| format!("{},{}", m[(i, j)].re, m[(i, j)].im)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out.as_bytes())?;
    Ok(sha256_hex(out.as_bytes()))
}

/// Reads a matrix written by [`write_dense_csv`].
pub fn read_dense_csv(path: &Path) -> Result<CMat> {
    let text = fs::read_to_string(path)?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|x| x.trim().parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| crate::OcsError::InvalidInput(format!("dense csv: {e}")))?;
    let n = rows.len();
    let k = rows.first().map_or(0, |r| r.len() / 2);
    if rows.iter().any(|r| r.len() != 2 * k) {
        return Err(crate::OcsError::InvalidInput("dense csv rows have unequal length".into()));
    }
    Ok(CMat::from_fn(n, k, |i, j| crate::c64(rows[i][2 * j], rows[i][2 * j + 1])))
}

/// A file produced by a run.
#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

/// Record written next to the CSVs of a run.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub kind: String,
    /// SHA-256 over the config bytes followed by every referenced input file.
    pub inputs_hash: String,
    pub seed: u64,
    pub versions: Versions,
    pub wall_time_s: f64,
    pub artifacts: Vec<Artifact>,
    pub summary: serde_json::Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub ocs: String,
    pub manifest_schema: u32,
}

impl Versions {
    pub fn current() -> Self {
        Versions { ocs: env!("CARGO_PKG_VERSION").to_string(), manifest_schema: 1 }
    }
}

/// Collects artifacts for one output directory.
#[derive(Debug)]
pub struct OutputDir {
    pub dir: PathBuf,
    pub artifacts: Vec<Artifact>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(OutputDir { dir: dir.to_path_buf(), artifacts: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, header: &[&str], rows: &[T]) -> Result<()> {
        let sha256 = write_csv_with_header(&self.path(name), header, rows)?;
        self.artifacts.push(Artifact { file: name.to_string(), sha256 });
        Ok(())
    }

    pub fn dense(&mut self, name: &str, m: &CMat) -> Result<()> {
        let sha256 = write_dense_csv(&self.path(name), m)?;
        self.artifacts.push(Artifact { file: name.to_string(), sha256 });
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(value)?;
        fs::write(self.path(name), &bytes)?;
        self.artifacts.push(Artifact { file: name.to_string(), sha256: sha256_hex(&bytes) });
        Ok(())
    }

    /// Writes `manifest.json`.
    pub fn finish(&self, manifest: &Manifest) -> Result<()> {
        fs::write(self.path("manifest.json"), serde_json::to_vec_pretty(manifest)?)?;
        Ok(())
    }
}
