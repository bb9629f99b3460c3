//! End-to-end run: two CIFAR-10 classes in, a labeled accumulation image out.
//!
//! Every stage writes its artifact under `out_dir`; populations are cached
//! per class and reused when the inputs and settings match. A `manifest.json`
//! records settings, payload hashes, timings and the consistency checks.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::accumulation::{self, AccumulationImage, SourceTag};
use crate::cifar::{self, Batch, GrayMode};
use crate::clustering::{self, SymmetrizeMode};
use crate::distance::{self, DistanceKind, DistanceMatrix, ScalarDistanceReport, Variant};
use crate::error::{Error, Result};
use crate::estimation::{self, GaussianPopulation, DEFAULT_RIDGE};
use crate::io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct PipelineConfig {
    pub data_dir: PathBuf,
    pub class_pair: [u8; 2],
    pub kind: DistanceKind,
    pub s: f64,
    pub variant: Variant,
    pub ridge: f64,
    pub symmetrize_mode: SymmetrizeMode,
    pub cluster_counts: Vec<usize>,
    pub out_dir: PathBuf,
    /// Mahalanobis pools the two covariances.
    pub pooled: bool,
    pub gray_mode: GrayMode,
    /// Restrict to the five training batches.
    pub train_only: bool,
    /// Side of the central window for the concentration ratio.
    pub center_window: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            data_dir: PathBuf::from("."),
            class_pair: [3, 5],
            kind: DistanceKind::Bhattacharyya,
            s: 0.3,
            variant: Variant::Corrected,
            ridge: DEFAULT_RIDGE,
            symmetrize_mode: SymmetrizeMode::Mean,
            cluster_counts: vec![3, 10],
            out_dir: PathBuf::from("out"),
            pooled: true,
            gray_mode: GrayMode::Luma,
            train_only: true,
            center_window: 16,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(0.0..=1.0).contains(&self.s) {
            return bad(format!("s = {} is outside [0, 1]", self.s));
        }
        if self.cluster_counts.is_empty() || self.cluster_counts.contains(&0) {
            return bad(format!("cluster counts {:?} must be nonempty and all >= 1", self.cluster_counts));
        }
        if !(self.ridge >= 0.0) {
            return bad(format!("ridge {} must be >= 0", self.ridge));
        }
        if let Some(c) = self.class_pair.iter().find(|&&c| c > 9) {
            return bad(format!("class id {c} is outside 0..=9"));
        }
        if self.center_window == 0 || self.center_window >= cifar::SIDE {
            return bad(format!("center window {} must be in 1..{}", self.center_window, cifar::SIDE));
        }
        Ok(())
    }

    /// Short tag used in output names, e.g. `cat-dog_bhattacharyya`.
    pub fn run_name(&self) -> String {
        let [a, b] = self.class_pair;
        format!("{}-{}_{}", cifar::CLASS_NAMES[a as usize], cifar::CLASS_NAMES[b as usize], self.kind)
    }
}

/// Trace of the matrix against the scalar closed form of the same kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceCheck {
    pub trace: f64,
    pub scalar: f64,
    /// `|trace − scalar| / (1 + |scalar|)`
    pub relative_residual: f64,
    /// Residual the variant is expected to leave; nonzero only for the
    /// `PaperExact` Bhattacharyya form.
    pub expected_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClassSummary {
    pub class_id: u8,
    pub name: String,
    pub count: usize,
    pub population: String,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LabelingSummary {
    pub k: usize,
    pub stem: String,
    pub legend: Vec<clustering::LegendEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Manifest {
    pub settings: PipelineConfig,
    pub input_digest: String,
    pub classes: Vec<ClassSummary>,
    pub trace_check: TraceCheck,
    pub scalars: ScalarDistanceReport,
    /// Central window mean over ring mean of the accumulation image; `None`
    /// when the ring mean is exactly zero.
    pub center_concentration: Option<f64>,
    /// Mean of Φ over the central window and over the surrounding ring.
    pub window_means: [f64; 2],
    pub dendrogram_monotone: bool,
    pub accelerated_path_agrees: bool,
    pub labelings: Vec<LabelingSummary>,
    /// SHA-256 of every payload written by the run, keyed by relative path.
    pub hashes: BTreeMap<String, String>,
    pub timings_seconds: BTreeMap<String, f64>,
}

/// Everything a run produced, kept in memory for callers.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub distance: DistanceMatrix,
    pub accumulation: AccumulationImage,
    pub dendrogram: clustering::Dendrogram,
}

/// Batches plus a digest of their raw bytes.
pub struct Dataset {
    pub batches: Vec<Batch>,
    pub digest: String,
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let dir = cifar::locate_data_dir(dir)?;
    let mut hasher = Sha256::new();
    let mut batches = Vec::new();
    let names = cifar::TRAIN_BATCHES.iter().map(|n| (*n, true)).chain([(cifar::TEST_BATCH, false)]);
    for (name, train) in names {
        let path = dir.join(name);
        if !train && !path.is_file() {
            continue;
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        hasher.update(name.as_bytes());
        hasher.update(&bytes);
        batches.push(Batch { name: name.into(), train, records: cifar::parse_batch(&bytes, &path)? });
    }
    Ok(Dataset { batches, digest: hex::encode(hasher.finalize()) })
}

fn population_source(cfg: &PipelineConfig, class_id: u8, digest: &str) -> String {
    format!(
        "cifar10 class={class_id} gray={} trainOnly={} data={digest}",
        cfg.gray_mode, cfg.train_only
    )
}

/// Estimates (or reloads) the Gaussian population of one class.
pub fn class_population(
    cfg: &PipelineConfig,
    data: &Dataset,
    class_id: u8,
) -> Result<(GaussianPopulation, PathBuf, bool)> {
    let stem = cfg.out_dir.join("populations").join(format!(
        "class{class_id}_{}_ridge{:e}",
        cfg.gray_mode, cfg.ridge
    ));
    let header = io::sibling(&stem, ".json");
    let source = population_source(cfg, class_id, &data.digest);
    if header.is_file() {
        if let Ok(p) = io::load_population(&header) {
            if p.source == source && p.ridge == cfg.ridge {
                return Ok((p, header, true));
            }
        }
    }
    let images = cifar::collect_class(&data.batches, class_id, cfg.train_only, cfg.gray_mode)?;
    let p = estimation::estimate_population(&images.samples()?, cfg.ridge)?.with_source(source);
    let header = io::save_population(&stem, &p)?;
    Ok((p, header, false))
}

/// The scalar closed form matching `d.kind`, and the gap its trace should
/// show under the chosen variant.
pub fn trace_check(d: &DistanceMatrix, p: &GaussianPopulation, q: &GaussianPopulation) -> Result<TraceCheck> {
    let (scalar, expected_gap) = match d.kind {
        DistanceKind::Mahalanobis => (distance::mahalanobis_scalar(p, q)?.0, 0.0),
        DistanceKind::Bhattacharyya => {
            let gap = match d.variant {
                Variant::PaperExact => distance::paper_exact_bhattacharyya_gap(p, q)?,
                Variant::Corrected => 0.0,
            };
            (distance::bhattacharyya_scalar(p, q)?, gap)
        }
        DistanceKind::Chernoff => (distance::chernoff_scalar(p, q, d.s)?, 0.0),
        DistanceKind::KullbackLeibler => (distance::kl_scalar(p, q, d.variant)?, 0.0),
    };
    let trace = d.trace();
    Ok(TraceCheck {
        trace,
        scalar,
        relative_residual: (trace - scalar).abs() / (1.0 + scalar.abs()),
        expected_gap,
    })
}

struct Recorder {
    out_dir: PathBuf,
    hashes: BTreeMap<String, String>,
    timings: BTreeMap<String, f64>,
    clock: Instant,
}

impl Recorder {
    fn hash(&mut self, path: &Path) -> Result<()> {
        let rel = path.strip_prefix(&self.out_dir).unwrap_or(path).to_string_lossy().replace('\\', "/");
        self.hashes.insert(rel, io::sha256_file(path)?);
        Ok(())
    }

    fn hash_all(&mut self, stem: &Path, suffixes: &[&str]) -> Result<()> {
        for s in suffixes {
            self.hash(&io::sibling(stem, s))?;
        }
        Ok(())
    }

    fn lap(&mut self, stage: &str) {
        self.timings.insert(stage.into(), self.clock.elapsed().as_secs_f64());
        self.clock = Instant::now();
    }
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let data = load_dataset(&cfg.data_dir).map_err(|e| e.in_stage("ingest"))?;
    run_pipeline_with(cfg, &data)
}

/// [`run_pipeline`] over an already loaded dataset.
pub fn run_pipeline_with(cfg: &PipelineConfig, data: &Dataset) -> Result<PipelineOutput> {
    cfg.validate()?;
    let started = Instant::now();
    let run_dir = cfg.out_dir.join(cfg.run_name());
    let mut rec = Recorder {
        out_dir: cfg.out_dir.clone(),
        hashes: BTreeMap::new(),
        timings: BTreeMap::new(),
        clock: Instant::now(),
    };

    let mut pops = Vec::with_capacity(2);
    let mut classes = Vec::with_capacity(2);
    for &class_id in &cfg.class_pair {
        let (p, header, cached) = class_population(cfg, data, class_id).map_err(|e| e.in_stage("estimate"))?;
        rec.hash_all(&header.with_extension(""), &[".json", ".mean.f64", ".cov.f64"])?;
        classes.push(ClassSummary {
            class_id,
            name: cifar::CLASS_NAMES[class_id as usize].into(),
            count: p.count,
            population: header.strip_prefix(&cfg.out_dir).unwrap_or(&header).to_string_lossy().into_owned(),
            cached,
        });
        pops.push(p);
    }
    let (p, q) = (&pops[0], &pops[1]);
    rec.lap("estimate");

    let d = distance::distance_matrix(p, q, cfg.kind, cfg.s, cfg.variant, cfg.pooled)
        .map_err(|e| e.in_stage("distmat"))?;
    let stem = run_dir.join("distance");
    io::save_distance_matrix(&stem, &d)?;
    rec.hash_all(&stem, &[".json", ".f64"])?;
    let check = trace_check(&d, p, q).map_err(|e| e.in_stage("distmat"))?;
    let scalars = distance::scalar_report(p, q, cfg.s, cfg.variant).map_err(|e| e.in_stage("distmat"))?;
    io::write_json(&run_dir.join("scalars.json"), &scalars)?;
    rec.hash(&run_dir.join("scalars.json"))?;
    rec.lap("distmat");

    let phi = accumulation::accumulate(&d);
    let img = accumulation::devectorize(&phi, cifar::SIDE)
        .map_err(|e| e.in_stage("accumulate"))?
        .with_source(SourceTag::from(&d));
    let stem = run_dir.join("accumulation");
    accumulation::export(&img, &stem)?;
    accumulation::render_heatmap(&img, &io::sibling(&stem, ".ppm"), 8)?;
    rec.hash_all(&stem, &[".json", ".f64", ".pgm", ".ppm"])?;
    let (center_mean, ring_mean) =
        accumulation::window_means(&img, cfg.center_window).map_err(|e| e.in_stage("accumulate"))?;
    let center_concentration = (ring_mean != 0.0).then(|| center_mean / ring_mean);
    rec.lap("accumulate");

    let delta = clustering::symmetrize(&d.matrix, cfg.symmetrize_mode).map_err(|e| e.in_stage("cluster"))?;
    let dn = clustering::agglomerate(&delta).map_err(|e| e.in_stage("cluster"))?;
    let dendrogram_monotone = dn.is_monotone();
    if !dendrogram_monotone {
        return Err(Error::Unsupported(String::from("complete-linkage merge distances decreased")).in_stage("cluster"));
    }
    let accelerated_path_agrees = clustering::agglomerate_fast(&delta).map_err(|e| e.in_stage("cluster"))? == dn;
    let path = run_dir.join("dendrogram.json");
    dn.save(&path)?;
    rec.hash(&path)?;

    let mut labelings = Vec::new();
    for &k in &cfg.cluster_counts {
        let k = k.min(dn.leaf_count);
        let labels = clustering::cut(&dn, k).map_err(|e| e.in_stage("cluster"))?;
        let li = clustering::label_image(&labels, &img).map_err(|e| e.in_stage("cluster"))?;
        let stem = run_dir.join(format!("labels_k{k}"));
        li.export(&stem)?;
        rec.hash_all(&stem, &[".pgm", ".legend.json", ".ppm"])?;
        labelings.push(LabelingSummary {
            k,
            stem: stem.strip_prefix(&cfg.out_dir).unwrap_or(&stem).to_string_lossy().into_owned(),
            legend: li.legend,
        });
    }
    rec.lap("cluster");
    rec.timings.insert("total".into(), started.elapsed().as_secs_f64());

    let manifest = Manifest {
        settings: cfg.clone(),
        input_digest: data.digest.clone(),
        classes,
        trace_check: check,
        scalars,
        center_concentration,
        window_means: [center_mean, ring_mean],
        dendrogram_monotone,
        accelerated_path_agrees,
        labelings,
        hashes: rec.hashes,
        timings_seconds: rec.timings,
    };
    let manifest_path = run_dir.join("manifest.json");
    io::write_json(&manifest_path, &manifest)?;
    Ok(PipelineOutput { manifest, manifest_path, distance: d, accumulation: img, dendrogram: dn })
}
