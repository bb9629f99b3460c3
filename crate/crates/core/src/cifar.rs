//! CIFAR-10 binary batches.
//!
//! Each record is one label byte followed by 3072 pixel bytes: the red plane,
//! then green, then blue, each 32×32 row-major. Images are reduced to one
//! channel in `[0, 1]` and kept in the same row-major order.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::SampleSet;

pub const SIDE: usize = 32;
pub const PIXELS: usize = SIDE * SIDE;
pub const RECORD_LEN: usize = 1 + 3 * PIXELS;

pub const CLASS_NAMES: [&str; 10] =
    ["airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"];

pub const TRAIN_BATCHES: [&str; 5] =
    ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"];
pub const TEST_BATCH: &str = "test_batch.bin";

/// MD5 of the official `cifar-10-binary.tar.gz`.
pub const TARBALL_MD5: &str = "c32a1d4ab5d03f1284b67883e8d87530";

pub const LAYOUT_HELP: &str = "\
expected CIFAR-10 binary layout (cifar-10-binary.tar.gz, md5 c32a1d4ab5d03f1284b67883e8d87530):
  <dir>/data_batch_1.bin .. data_batch_5.bin   10000 records x 3073 bytes each
  <dir>/test_batch.bin                         optional
<dir> may also be the parent of cifar-10-batches-bin/. Pass --data-dir or set CIFAR10_DIR.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CifarRecord {
    pub label: u8,
    pub pixels: Vec<u8>,
}

impl CifarRecord {
    fn channel(&self, c: usize) -> &[u8] {
        &self.pixels[c * PIXELS..(c + 1) * PIXELS]
    }
}

/// How three channels become one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrayMode {
    /// `0.299 R + 0.587 G + 0.114 B`
    #[default]
    Luma,
    /// `(R + G + B) / 3`
    ChannelMean,
}

impl std::str::FromStr for GrayMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "luma" => Ok(GrayMode::Luma),
            "channel_mean" | "mean" => Ok(GrayMode::ChannelMean),
            other => Err(format!("unknown gray mode `{other}`")),
        }
    }
}

impl std::fmt::Display for GrayMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GrayMode::Luma => "luma",
            GrayMode::ChannelMean => "channel_mean",
        })
    }
}

pub fn parse_batch(bytes: &[u8], path: &Path) -> Result<Vec<CifarRecord>> {
    let malformed = |reason: String| Error::MalformedFile { path: path.to_path_buf(), reason };
    if bytes.len() % RECORD_LEN != 0 {
        return Err(malformed(format!("{} bytes is not a multiple of {RECORD_LEN}", bytes.len())));
    }
    bytes
        .chunks_exact(RECORD_LEN)
        .enumerate()
        .map(|(i, chunk)| {
            if chunk[0] > 9 {
                return Err(malformed(format!("record {i} has label {}", chunk[0])));
            }
            Ok(CifarRecord { label: chunk[0], pixels: chunk[1..].to_vec() })
        })
        .collect()
}

/// All records of one batch file, in file order.
pub fn read_batch(path: &Path) -> Result<Vec<CifarRecord>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_batch(&bytes, path)
}

pub fn to_grayscale_unit(r: &CifarRecord, mode: GrayMode) -> Vec<f64> {
    let (red, green, blue) = (r.channel(0), r.channel(1), r.channel(2));
    (0..PIXELS)
        .map(|k| {
            let (r, g, b) = (red[k] as f64, green[k] as f64, blue[k] as f64);
            let y = match mode {
                GrayMode::Luma => (0.299 * r + 0.587 * g + 0.114 * b) / 255.0,
                GrayMode::ChannelMean => (r + g + b) / 765.0,
            };
            y.clamp(0.0, 1.0)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub name: String,
    pub train: bool,
    pub records: Vec<CifarRecord>,
}

/// Resolves a user-supplied directory to the one holding the batch files.
pub fn locate_data_dir(dir: &Path) -> Result<PathBuf> {
    for candidate in [dir.to_path_buf(), dir.join("cifar-10-batches-bin")] {
        if candidate.join(TRAIN_BATCHES[0]).is_file() {
            return Ok(candidate);
        }
    }
    Err(Error::MalformedFile {
        path: dir.to_path_buf(),
        reason: format!("no {} found\n{LAYOUT_HELP}", TRAIN_BATCHES[0]),
    })
}

/// Reads the five training batches and, if present, the test batch.
pub fn load_batches(dir: &Path) -> Result<Vec<Batch>> {
    let dir = locate_data_dir(dir)?;
    let mut batches = Vec::with_capacity(6);
    for name in TRAIN_BATCHES {
        batches.push(Batch { name: name.into(), train: true, records: read_batch(&dir.join(name))? });
    }
    let test = dir.join(TEST_BATCH);
    if test.is_file() {
        batches.push(Batch { name: TEST_BATCH.into(), train: false, records: read_batch(&test)? });
    }
    Ok(batches)
}

/// One class as vectorized grayscale images, concatenated row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub class_id: u8,
    pub side: usize,
    pub gray: GrayMode,
    pub data: Vec<f64>,
}

impl ImageSet {
    pub fn count(&self) -> usize {
        self.data.len() / (self.side * self.side)
    }

    pub fn image(&self, k: usize) -> &[f64] {
        let n = self.side * self.side;
        &self.data[k * n..(k + 1) * n]
    }

    /// The images as estimation input; needs at least two of them.
    pub fn samples(&self) -> Result<SampleSet> {
        SampleSet::new(self.side * self.side, self.data.clone())
    }
}

/// Every record with label `class_id`, batch by batch in record order.
pub fn collect_class(batches: &[Batch], class_id: u8, train_only: bool, gray: GrayMode) -> Result<ImageSet> {
    let mut data = Vec::new();
    for batch in batches.iter().filter(|b| b.train || !train_only) {
        for r in batch.records.iter().filter(|r| r.label == class_id) {
            data.extend(to_grayscale_unit(r, gray));
        }
    }
    if data.is_empty() {
        return Err(Error::ClassNotFound(class_id));
    }
    assert!(data.iter().all(|v| (0.0..=1.0).contains(v)), "grayscale values left [0, 1]");
    Ok(ImageSet { class_id, side: SIDE, gray, data })
}

/// Encodes records in the on-disk format.
pub fn encode_batch(records: &[CifarRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * RECORD_LEN);
    for r in records {
        out.push(r.label);
        out.extend_from_slice(&r.pixels);
    }
    out
}

/// Writes a stand-in dataset with the official file names and format.
///
/// Pixels are independent noise around a flat grey level plus a centred
/// Gaussian blob. Classes differ only through the blob (its mean brightness,
/// its image-to-image spread and the noise under it), so away from the centre
/// every class has the same distribution. `per_class` images of each class go
/// into every training batch; the test batch holds a tenth of that.
pub fn write_synthetic_dataset(dir: &Path, per_class: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = TRAIN_BATCHES.iter().copied().chain([TEST_BATCH]);
    for (b, name) in names.enumerate() {
        let count = if b < 5 { per_class } else { per_class.div_ceil(10) };
        let mut records = Vec::with_capacity(10 * count);
        for _ in 0..count {
            for label in 0..10u8 {
                records.push(synthetic_record(label, &mut rng));
            }
        }
        let path = dir.join(name);
        std::fs::write(&path, encode_batch(&records)).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    Ok(())
}

fn synthetic_record(label: u8, rng: &mut ChaCha8Rng) -> CifarRecord {
    let c = label as f64;
    let blob = 12.0 * c + 8.0 * rng.sample::<f64, _>(StandardNormal);
    let mut pixels = vec![0u8; 3 * PIXELS];
    for k in 0..PIXELS {
        let (r, col) = ((k / SIDE) as f64 - 15.5, (k % SIDE) as f64 - 15.5);
        let g = (-(r * r + col * col) / 50.0).exp();
        let level = 110.0 + blob * g;
        let spread = 10.0 + c * g;
        for ch in 0..3 {
            let noise: f64 = StandardNormal.sample(rng);
            pixels[ch * PIXELS + k] = (level + spread * noise).round().clamp(0.0, 255.0) as u8;
        }
    }
    CifarRecord { label, pixels }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, rgb: [u8; 3]) -> CifarRecord {
        let mut pixels = vec![0u8; 3 * PIXELS];
        for c in 0..3 {
            pixels[c * PIXELS..(c + 1) * PIXELS].fill(rgb[c]);
        }
        CifarRecord { label, pixels }
    }

    #[test]
    fn parse_examples() {
        let p = Path::new("x.bin");
        assert!(parse_batch(&[], p).unwrap().is_empty());
        let one = parse_batch(&encode_batch(&[record(3, [255; 3])]), p).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].label, 3);
        assert!(one[0].pixels.iter().all(|&v| v == 255));
        assert!(matches!(parse_batch(&[0u8; 3072], p), Err(Error::MalformedFile { .. })));
        let mut bad = encode_batch(&[record(3, [0; 3])]);
        bad[0] = 10;
        assert!(matches!(parse_batch(&bad, p), Err(Error::MalformedFile { .. })));
    }

    #[test]
    fn grayscale_examples() {
        assert!(to_grayscale_unit(&record(0, [0; 3]), GrayMode::Luma).iter().all(|&v| v == 0.0));
        assert!(to_grayscale_unit(&record(0, [255; 3]), GrayMode::Luma).iter().all(|&v| v == 1.0));
        let red = to_grayscale_unit(&record(0, [255, 0, 0]), GrayMode::Luma);
        assert!(red.iter().all(|&v| (v - 0.299).abs() < 1e-15));
        let mean = to_grayscale_unit(&record(0, [255, 0, 0]), GrayMode::ChannelMean);
        assert!(mean.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn grayscale_keeps_row_major_order() {
        let mut r = record(1, [0; 3]);
        r.pixels[33] = 255;
        r.pixels[PIXELS + 33] = 255;
        r.pixels[2 * PIXELS + 33] = 255;
        let y = to_grayscale_unit(&r, GrayMode::Luma);
        let img = crate::accumulation::devectorize(&y, SIDE).unwrap();
        assert_eq!(img.get(1, 1), 1.0);
        assert_eq!(y.iter().filter(|&&v| v > 0.0).count(), 1);
    }

    #[test]
    fn collect_examples() {
        let batches = vec![Batch { name: "b".into(), train: true, records: vec![record(5, [9; 3]), record(2, [0; 3])] }];
        let set = collect_class(&batches, 5, true, GrayMode::Luma).unwrap();
        assert_eq!((set.count(), set.image(0).len()), (1, 1024));
        assert!(matches!(set.samples(), Err(Error::TooFewSamples(1))));
        assert!(matches!(collect_class(&batches, 7, true, GrayMode::Luma), Err(Error::ClassNotFound(7))));

        let with_test = vec![
            batches[0].clone(),
            Batch { name: "t".into(), train: false, records: vec![record(5, [1; 3])] },
        ];
        assert_eq!(collect_class(&with_test, 5, true, GrayMode::Luma).unwrap().count(), 1);
        assert_eq!(collect_class(&with_test, 5, false, GrayMode::Luma).unwrap().count(), 2);
    }

    #[test]
    fn synthetic_dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_dataset(dir.path(), 3, 1).unwrap();
        let batches = load_batches(dir.path()).unwrap();
        assert_eq!(batches.len(), 6);
        assert_eq!(batches[0].records.len(), 30);
        let a = collect_class(&batches, 5, true, GrayMode::Luma).unwrap();
        assert_eq!(a.count(), 15);
        let again = collect_class(&load_batches(dir.path()).unwrap(), 5, true, GrayMode::Luma).unwrap();
        assert_eq!(a, again);

        let nested = tempfile::tempdir().unwrap();
        write_synthetic_dataset(&nested.path().join("cifar-10-batches-bin"), 1, 1).unwrap();
        assert!(locate_data_dir(nested.path()).unwrap().ends_with("cifar-10-batches-bin"));
        assert!(locate_data_dir(Path::new("/nonexistent")).is_err());
    }
}
