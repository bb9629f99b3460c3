//! Distance-accumulation images.
//!
//! Every element `t` collects all local distances it takes part in,
//! `φ_t = Σ_u δ_ut + Σ_v δ_tv` (so the diagonal entry counts twice), and the
//! vector `φ` is laid back onto the image grid. Vectorization is row-major,
//! the order CIFAR-10 stores its pixels in.
//!
//! Row and column sums are taken over the entries sorted by value with
//! compensation, so relabeling the elements permutes `φ` bit for bit.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{DistanceKind, DistanceMatrix, Variant};
use crate::error::{Error, Result};
use crate::estimation::CompensatedSum;
use crate::io::{self, Normalization};

/// Order-independent sum: compensated, over the values sorted ascending.
pub fn canonical_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(f64::total_cmp);
    let mut acc = CompensatedSum::default();
    for x in v {
        acc.add(x);
    }
    acc.value()
}

/// Row sum plus column sum for every index of a square matrix.
pub fn accumulate_matrix(m: &DMatrix<f64>) -> Vec<f64> {
    assert!(m.is_square(), "accumulation needs a square matrix");
    (0..m.nrows())
        .into_par_iter()
        .map(|t| canonical_sum(m.column(t).iter().copied()) + canonical_sum(m.row(t).iter().copied()))
        .collect()
}

pub fn accumulate(d: &DistanceMatrix) -> Vec<f64> {
    accumulate_matrix(&d.matrix)
}

/// Which distance an image was accumulated from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceTag {
    pub kind: DistanceKind,
    pub variant: Variant,
    pub s: f64,
}

impl From<&DistanceMatrix> for SourceTag {
    fn from(d: &DistanceMatrix) -> Self {
        SourceTag { kind: d.kind, variant: d.variant, s: d.s }
    }
}

/// A `side × side` grid of accumulated distances, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumulationImage {
    pub side: usize,
    pub values: Vec<f64>,
    pub source: Option<SourceTag>,
}

impl AccumulationImage {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.side + col]
    }

    pub fn with_source(mut self, source: SourceTag) -> Self {
        self.source = Some(source);
        self
    }
}

/// Lays `phi` (length `side²`) onto the grid row by row.
pub fn devectorize(phi: &[f64], side: usize) -> Result<AccumulationImage> {
    if side == 0 || phi.len() != side * side {
        return Err(Error::LengthMismatch { len: phi.len(), side });
    }
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(AccumulationImage { side, values: phi.to_vec(), source: None })
}

pub fn vectorize(img: &AccumulationImage) -> Vec<f64> {
    img.values.clone()
}

/// Integer square root for image vectors, if `len` is a perfect square.
pub fn side_of(len: usize) -> Option<usize> {
    let side = (len as f64).sqrt().round() as usize;
    (side * side == len).then_some(side)
}

/// Means of the centered `inner × inner` window and of the ring around it.
/// The window starts at `⌊(side − inner)/2⌋` on both axes.
pub fn window_means(img: &AccumulationImage, inner: usize) -> Result<(f64, f64)> {
    let side = img.side;
    if inner == 0 || inner >= side {
        return Err(Error::InvalidWindow { inner, side });
    }
    let lo = (side - inner) / 2;
    let hi = lo + inner;
    let (mut center, mut ring) = (0.0, 0.0);
    for r in 0..side {
        for c in 0..side {
            let v = img.get(r, c);
            if (lo..hi).contains(&r) && (lo..hi).contains(&c) {
                center += v;
            } else {
                ring += v;
            }
        }
    }
    Ok((center / (inner * inner) as f64, ring / (side * side - inner * inner) as f64))
}

/// Center window mean divided by ring mean. Entries of Φ can be negative, so
/// the ratio is only meaningful when the ring mean is positive.
pub fn center_concentration(img: &AccumulationImage, inner: usize) -> Result<f64> {
    let (center, ring) = window_means(img, inner)?;
    if ring == 0.0 {
        return Err(Error::DegenerateRing);
    }
    Ok(center / ring)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccumulationSidecar {
    pub side: usize,
    pub normalization: Normalization,
    pub source: Option<SourceTag>,
    pub raw: String,
    pub pgm: String,
}

/// Writes `<stem>.f64` (raw values), `<stem>.pgm` (16-bit, min-max scaled)
/// and `<stem>.json` (scaling bounds). Returns the sidecar path.
pub fn export(img: &AccumulationImage, stem: &Path) -> Result<PathBuf> {
    let with = |suffix: &str| io::sibling(stem, suffix);
    let (raw, pgm, json) = (with(".f64"), with(".pgm"), with(".json"));
    io::write_f64_le(&raw, &img.values)?;
    let norm = Normalization::of(&img.values);
    let pixels: Vec<u16> = img.values.iter().map(|&v| norm.to_u16(v)).collect();
    io::write_pgm(&pgm, img.side, img.side, u16::MAX, &pixels)?;
    let sidecar = AccumulationSidecar {
        side: img.side,
        normalization: norm,
        source: img.source,
        raw: raw.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        pgm: pgm.file_name().unwrap_or_default().to_string_lossy().into_owned(),
    };
    io::write_json(&json, &sidecar)?;
    Ok(json)
}

/// Colour heatmap (`P6`), min-max scaled, each pixel drawn as a
/// `scale × scale` block.
pub fn render_heatmap(img: &AccumulationImage, path: &Path, scale: usize) -> Result<()> {
    let scale = scale.max(1);
    let norm = Normalization::of(&img.values);
    let w = img.side * scale;
    let pixels: Vec<[u8; 3]> = (0..w * w)
        .map(|k| io::ramp_color(norm.unit(img.get(k / w / scale, k % w / scale))))
        .collect();
    io::write_ppm(path, w, w, &pixels)
}

/// Reads an image written by [`export`] from its sidecar.
pub fn import(sidecar_path: &Path) -> Result<AccumulationImage> {
    let sidecar: AccumulationSidecar = io::read_json(sidecar_path)?;
    let dir = sidecar_path.parent().unwrap_or(Path::new("."));
    let values = io::read_f64_le(&dir.join(&sidecar.raw))?;
    let mut img = devectorize(&values, sidecar.side)?;
    img.source = sidecar.source;
    Ok(img)
}
