//! On-disk formats.
//!
//! Numeric payloads are raw little-endian `f64` with a JSON header next to
//! them. Images are binary PGM (`P5`) and PPM (`P6`).

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distance::{DistanceKind, DistanceMatrix, Variant};
use crate::error::{Error, Result};
use crate::estimation::GaussianPopulation;
use crate::spd::{SpdMatrix, SymMatrix};

pub fn write_f64_le(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes(path, &bytes)
}

pub fn read_f64_le(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::MalformedFile {
            path: path.to_path_buf(),
            reason: format!("length {} is not a multiple of 8", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes a binary PGM. One byte per sample when `maxval < 256`, otherwise
/// two bytes, most significant first.
pub fn write_pgm(path: &Path, width: usize, height: usize, maxval: u16, pixels: &[u16]) -> Result<()> {
    assert_eq!(pixels.len(), width * height, "pixel count");
    let maxval = maxval.max(1);
    let mut bytes = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    for &p in pixels {
        let p = p.min(maxval);
        if maxval < 256 {
            bytes.push(p as u8);
        } else {
            bytes.extend_from_slice(&p.to_be_bytes());
        }
    }
    write_bytes(path, &bytes)
}

pub fn write_ppm(path: &Path, width: usize, height: usize, pixels: &[[u8; 3]]) -> Result<()> {
    assert_eq!(pixels.len(), width * height, "pixel count");
    let mut bytes = format!("P6\n{width} {height}\n255\n").into_bytes();
    for p in pixels {
        bytes.extend_from_slice(p);
    }
    write_bytes(path, &bytes)
}

/// Parses a binary PGM written by [`write_pgm`]: `(width, height, maxval, pixels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, u16, Vec<u16>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let malformed = |reason: &str| Error::MalformedFile { path: path.to_path_buf(), reason: reason.to_string() };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(malformed("not a binary PGM"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| malformed("bad header number"));
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    let wide = maxval >= 256;
    let body = &bytes[pos.min(bytes.len())..];
    let expected = width * height * if wide { 2 } else { 1 };
    if body.len() != expected {
        return Err(malformed("pixel data length"));
    }
    let pixels = if wide {
        body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        body.iter().map(|&b| b as u16).collect()
    };
    Ok((width, height, maxval as u16, pixels))
}

/// Viridis control points, evenly spaced on `[0, 1]`.
const RAMP: [[u8; 3]; 9] = [
    [68, 1, 84],
    [71, 44, 122],
    [59, 81, 139],
    [44, 113, 142],
    [33, 144, 141],
    [39, 173, 129],
    [92, 200, 99],
    [170, 220, 50],
    [253, 231, 37],
];

/// Maps `t ∈ [0, 1]` onto the built-in perceptually uniform ramp.
pub fn ramp_color(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (RAMP.len() - 1) as f64;
    let i = (x.floor() as usize).min(RAMP.len() - 2);
    let f = x - i as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        let v = RAMP[i][c] as f64 * (1.0 - f) + RAMP[i + 1][c] as f64 * f;
        out[c] = v.round() as u8;
    }
    out
}

/// Min-max scaling bounds used for an exported image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: f64,
    pub max: f64,
}

impl Normalization {
    pub fn of(values: &[f64]) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Normalization { min, max }
    }

    /// `(v − min)/(max − min)`, or 0 for a constant image.
    pub fn unit(&self, v: f64) -> f64 {
        let span = self.max - self.min;
        if span > 0.0 {
            (v - self.min) / span
        } else {
            0.0
        }
    }

    pub fn to_u16(&self, v: f64) -> u16 {
        (self.unit(v) * 65535.0).round() as u16
    }
}

/// `base` with `suffix` appended to its file name.
pub(crate) fn sibling(base: &Path, suffix: &str) -> PathBuf {
    let mut name = base.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    base.with_file_name(name)
}

pub(crate) fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PopulationHeader {
    pub n: usize,
    #[serde(rename = "N")]
    pub count: usize,
    pub ridge: f64,
    pub kind_of_source: String,
    pub mean_file: String,
    pub cov_file: String,
}

/// Writes `<stem>.json`, `<stem>.mean.f64` and `<stem>.cov.f64`. Returns the
/// header path.
pub fn save_population(stem: &Path, p: &GaussianPopulation) -> Result<PathBuf> {
    let mean_path = sibling(stem, ".mean.f64");
    let cov_path = sibling(stem, ".cov.f64");
    write_f64_le(&mean_path, p.mean.as_slice())?;
    // Column-major storage of a symmetric matrix equals its row-major order.
    write_f64_le(&cov_path, p.cov.as_matrix().as_slice())?;
    let header = PopulationHeader {
        n: p.dim(),
        count: p.count,
        ridge: p.ridge,
        kind_of_source: p.source.clone(),
        mean_file: file_name(&mean_path),
        cov_file: file_name(&cov_path),
    };
    let header_path = sibling(stem, ".json");
    write_json(&header_path, &header)?;
    Ok(header_path)
}

pub fn load_population(header_path: &Path) -> Result<GaussianPopulation> {
    let header: PopulationHeader = read_json(header_path)?;
    let dir = header_path.parent().unwrap_or(Path::new("."));
    let mean = read_f64_le(&dir.join(&header.mean_file))?;
    let cov = read_f64_le(&dir.join(&header.cov_file))?;
    if mean.len() != header.n || cov.len() != header.n * header.n {
        return Err(Error::MalformedFile {
            path: header_path.to_path_buf(),
            reason: format!("payload sizes {} / {} do not match n = {}", mean.len(), cov.len(), header.n),
        });
    }
    let cov = SpdMatrix::new(SymMatrix::from_row_major(header.n, &cov)?)?.with_regularized_flag(header.ridge > 0.0);
    Ok(GaussianPopulation {
        mean: DVector::from_vec(mean),
        cov,
        count: header.count,
        ridge: header.ridge,
        source: header.kind_of_source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceHeader {
    pub kind: DistanceKind,
    pub s: f64,
    pub variant: Variant,
    pub n: usize,
    pub trace: f64,
    pub pooled: bool,
    pub ridge: [f64; 2],
    pub payload: String,
}

/// Writes `<stem>.json` and the row-major payload `<stem>.f64`.
pub fn save_distance_matrix(stem: &Path, d: &DistanceMatrix) -> Result<PathBuf> {
    let payload = sibling(stem, ".f64");
    write_f64_le(&payload, d.matrix.transpose().as_slice())?;
    let header = DistanceHeader {
        kind: d.kind,
        s: d.s,
        variant: d.variant,
        n: d.dim(),
        trace: d.trace(),
        pooled: d.pooled,
        ridge: d.ridge,
        payload: file_name(&payload),
    };
    let header_path = sibling(stem, ".json");
    write_json(&header_path, &header)?;
    Ok(header_path)
}

pub fn load_distance_matrix(header_path: &Path) -> Result<DistanceMatrix> {
    let header: DistanceHeader = read_json(header_path)?;
    let dir = header_path.parent().unwrap_or(Path::new("."));
    let values = read_f64_le(&dir.join(&header.payload))?;
    if values.len() != header.n * header.n {
        return Err(Error::MalformedFile {
            path: header_path.to_path_buf(),
            reason: format!("payload has {} values, expected {}", values.len(), header.n * header.n),
        });
    }
    Ok(DistanceMatrix {
        kind: header.kind,
        s: header.s,
        variant: header.variant,
        pooled: header.pooled,
        ridge: header.ridge,
        matrix: DMatrix::from_row_slice(header.n, header.n, &values),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_matrix_round_trip_is_row_major() {
        let dir = tempfile::tempdir().unwrap();
        let d = DistanceMatrix {
            kind: DistanceKind::Chernoff,
            s: 0.3,
            variant: Variant::Corrected,
            pooled: false,
            ridge: [1e-6, 1e-6],
            matrix: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
        };
        let header = save_distance_matrix(&dir.path().join("dc"), &d).unwrap();
        let raw = read_f64_le(&dir.path().join("dc.f64")).unwrap();
        assert_eq!(raw, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(load_distance_matrix(&header).unwrap(), d);
        let h: serde_json::Value = read_json(&header).unwrap();
        assert_eq!(h["kind"], "chernoff");
        assert_eq!(h["trace"], 5.0);
    }

    #[test]
    fn population_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cov = SpdMatrix::from_row_major(2, &[2.0, 0.5, 0.5, 1.0]).unwrap();
        let p = GaussianPopulation::new(DVector::from_row_slice(&[0.25, -1.0]), cov, 7)
            .unwrap()
            .with_source("test");
        let header = save_population(&dir.path().join("pop"), &p).unwrap();
        let q = load_population(&header).unwrap();
        assert_eq!(q.mean, p.mean);
        assert_eq!(q.cov.as_matrix(), p.cov.as_matrix());
        assert_eq!((q.count, q.source.as_str()), (7, "test"));
        let h: serde_json::Value = read_json(&header).unwrap();
        assert_eq!(h["N"], 7);
        assert_eq!(h["kindOfSource"], "test");
    }

    #[test]
    fn pgm_round_trip_both_widths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        write_pgm(&path, 2, 2, 3, &[0, 1, 2, 3]).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), (2, 2, 3, vec![0, 1, 2, 3]));
        write_pgm(&path, 3, 1, 65535, &[0, 300, 65535]).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), (3, 1, 65535, vec![0, 300, 65535]));
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp_color(0.0), RAMP[0]);
        assert_eq!(ramp_color(1.0), RAMP[8]);
        assert_eq!(ramp_color(f64::NAN), RAMP[0]);
    }
}
