//! Acceptance criteria, one printed line each.
//!
//! Runs without the libtest harness so the lines appear in plain
//! `cargo test` output. Exits nonzero if any criterion fails. A criterion
//! that cannot be evaluated here is reported as UNVERIFIED, never as PASS.
//!
//! Criterion 7 needs the CIFAR-10 binary batches; point `CIFAR10_DIR` at
//! them. Without it the same pipeline runs on a synthetic stand-in in the
//! official format so timing and mechanics are still exercised.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mandala::cifar;
use mandala::clustering::{self, Dissimilarity};
use mandala::distance::{self, DistanceKind, Variant};
use mandala::estimation::GaussianPopulation;
use mandala::pipeline::{self, Dataset, PipelineConfig, PipelineOutput};
use mandala::verify::{random_pair, random_population, trace_residuals};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 0x5eed_2024;

#[derive(Clone, Copy, PartialEq)]
enum Status {
    Pass,
    Fail,
    Unverified,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Unverified => "UNVERIFIED",
        })
    }
}

struct Criterion {
    id: u8,
    title: &'static str,
    status: Status,
    detail: String,
}

fn verdict(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

fn trace_consistency() -> Criterion {
    let started = Instant::now();
    let worst = trace_residuals(&[2, 4, 8, 16, 32], 100, SEED).expect("trace residuals");
    let secs = started.elapsed().as_secs_f64();
    let max = worst.iter().map(|(_, r)| *r).fold(0.0, f64::max);
    let parts: Vec<String> = worst.iter().map(|(n, r)| format!("{}: {r:.1e}", n.trim_start_matches("trace "))).collect();
    Criterion {
        id: 1,
        title: "trace consistency, 100 pairs x n in {2,4,8,16,32}",
        status: verdict(max <= 1e-8 && secs < 30.0),
        detail: format!("worst rel {max:.2e} <= 1e-8 [{}]; {secs:.1}s < 30s", parts.join(", ")),
    }
}

fn random_low_dim_pairs(count: usize, seed: u64) -> Vec<(GaussianPopulation, GaussianPopulation)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let n = 1 + k % 2;
            (random_population(n, 0.3, 3.0, &mut rng), random_population(n, 0.3, 3.0, &mut rng))
        })
        .collect()
}

fn quadrature_oracle() -> Criterion {
    let started = Instant::now();
    let (mut wb, mut wc) = (0.0f64, 0.0f64);
    for (p, q) in random_low_dim_pairs(20, SEED) {
        let qb = distance::divergence_integration_oracle(&p, &q, DistanceKind::Bhattacharyya, 0.5).unwrap().value;
        let qc = distance::divergence_integration_oracle(&p, &q, DistanceKind::Chernoff, 0.3).unwrap().value;
        let tb = distance::bhattacharyya_matrix(&p, &q, Variant::Corrected).unwrap().trace();
        let tc = distance::chernoff_matrix(&p, &q, 0.3).unwrap().trace();
        wb = wb.max((qb - tb).abs());
        wc = wc.max((qc - tc).abs());
    }
    // Hand-derivable anchor: N(0,1) vs N(1,2) has D_B = 1/12 + ln(1.5/sqrt 2)/2.
    let p = one_dim(0.0, 1.0);
    let q = one_dim(1.0, 2.0);
    let anchor = 1.0 / 12.0 + 0.5 * (1.5 / 2f64.sqrt()).ln();
    let wa = (distance::bhattacharyya_matrix(&p, &q, Variant::Corrected).unwrap().trace() - anchor).abs();
    let secs = started.elapsed().as_secs_f64();
    Criterion {
        id: 2,
        title: "quadrature oracle, 20 pairs in 1-D/2-D",
        status: verdict(wb <= 1e-4 && wc <= 1e-4 && wa <= 1e-12 && secs < 60.0),
        detail: format!("|D_B| gap {wb:.1e}, |D_C(0.3)| gap {wc:.1e} <= 1e-4; 1-D anchor {wa:.1e}; {secs:.1}s < 60s"),
    }
}

fn one_dim(mean: f64, var: f64) -> GaussianPopulation {
    let cov = mandala::spd::SpdMatrix::from_diagonal(&[var]).unwrap();
    GaussianPopulation::new(DVector::from_element(1, mean), cov, 0).unwrap()
}

fn reduction_identities() -> Criterion {
    let (mut c05, mut edges, mut eighth) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..40u64 {
        let n = [2, 4, 8, 16, 32][k as usize % 5];
        let (p, q) = random_pair(n, 0.2, 5.0, SEED + k);
        let b = distance::bhattacharyya_matrix(&p, &q, Variant::Corrected).unwrap().matrix;
        let c = distance::chernoff_matrix(&p, &q, 0.5).unwrap().matrix;
        c05 = c05.max((&b - &c).amax());
        for s in [0.0, 1.0] {
            edges = edges.max(distance::chernoff_matrix(&p, &q, s).unwrap().trace().abs());
        }
        let mut q_eq = p.clone();
        q_eq.mean = q.mean.clone();
        let tb = distance::bhattacharyya_matrix(&p, &q_eq, Variant::Corrected).unwrap().trace();
        let tm = distance::mahalanobis_matrix(&p, &q_eq, false).unwrap().trace();
        eighth = eighth.max((tb - tm / 8.0).abs());
    }
    Criterion {
        id: 3,
        title: "reduction identities",
        status: verdict(c05 <= 1e-10 && edges <= 1e-10 && eighth <= 1e-10),
        detail: format!("C(0.5) vs B elementwise {c05:.1e}; |tr C(0|1)| {edges:.1e}; tr B - tr M/8 {eighth:.1e}; all <= 1e-10"),
    }
}

fn variant_discriminators() -> Criterion {
    let (mut b0, mut kl_c0) = (0.0f64, 0.0f64);
    let mut kl_2n_exact = true;
    for k in 0..20u64 {
        let n = 1 + (k as usize % 16);
        let (p, _) = random_pair(n, 0.2, 5.0, SEED + 100 + k);
        b0 = b0.max(distance::bhattacharyya_matrix(&p, &p, Variant::Corrected).unwrap().trace().abs());
        kl_2n_exact &= distance::kl_matrix(&p, &p, Variant::PaperExact).unwrap().trace() == 2.0 * n as f64;
        kl_c0 = kl_c0.max(distance::kl_matrix(&p, &p, Variant::Corrected).unwrap().trace().abs());
    }
    let mut wq = 0.0f64;
    for (p, q) in random_low_dim_pairs(10, SEED + 7) {
        let quad = distance::divergence_integration_oracle(&p, &q, DistanceKind::KullbackLeibler, 0.0).unwrap().value;
        wq = wq.max((quad - distance::kl_matrix(&p, &q, Variant::Corrected).unwrap().trace()).abs());
    }
    // N(0,1) vs N(1,2): symmetrized KL is exactly 1.
    let jeffreys = distance::kl_matrix(&one_dim(0.0, 1.0), &one_dim(1.0, 2.0), Variant::Corrected).unwrap().trace();
    let wj = (jeffreys - 1.0).abs();
    Criterion {
        id: 4,
        title: "variant discriminators",
        status: verdict(b0 <= 1e-10 && kl_2n_exact && kl_c0 <= 1e-10 && wq <= 1e-3 && wj <= 1e-12),
        detail: format!(
            "p=q: |tr B| {b0:.1e}, tr KL(paper_exact) == 2n {kl_2n_exact}, |tr KL(corr)| {kl_c0:.1e}; KL(corr) vs quadrature {wq:.1e} <= 1e-3; 1-D anchor {wj:.1e}"
        ),
    }
}

fn random_distinct_dissimilarity(d: usize, rng: &mut ChaCha8Rng) -> Dissimilarity {
    loop {
        let values: Vec<f64> = (0..d * (d - 1) / 2).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).all(|w| w[0] < w[1]) {
            let mut it = values.into_iter();
            return Dissimilarity::from_fn(d, |_, _| it.next().unwrap()).unwrap();
        }
    }
}

fn clustering_oracle(large_runs: &[(String, bool)]) -> Criterion {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut mismatches, mut non_monotone) = (0usize, 0usize);
    for k in 0..1000 {
        let d = 2 + k % 9;
        let delta = random_distinct_dissimilarity(d, &mut rng);
        let dn = clustering::agglomerate(&delta).unwrap();
        mismatches += usize::from(dn != clustering::reference_complete_linkage(&delta).unwrap());
        non_monotone += usize::from(!dn.is_monotone());
    }
    let large_ok = large_runs.iter().all(|(_, m)| *m);
    Criterion {
        id: 5,
        title: "clustering oracle, 1000 matrices d <= 10",
        status: verdict(mismatches == 0 && non_monotone == 0 && large_ok && !large_runs.is_empty()),
        detail: format!(
            "{mismatches} merge-list mismatches, {non_monotone} non-monotone; d=1024 runs monotone: {}/{}",
            large_runs.iter().filter(|(_, m)| *m).count(),
            large_runs.len()
        ),
    }
}

fn hellinger_sweep() -> Criterion {
    let base = random_pair(4, 0.5, 2.0, SEED).0;
    let dir = DVector::from_element(4, 0.5);
    let mut values = Vec::new();
    for i in 0..=1000 {
        let t = i as f64 / 100.0;
        let mut q = base.clone();
        q.mean = &base.mean + &dir * t;
        let db = distance::bhattacharyya_matrix(&base, &q, Variant::Corrected).unwrap().trace();
        values.push(distance::hellinger_scalar(db.max(0.0)).unwrap());
    }
    let in_range = values.iter().all(|v| (0.0..1.0).contains(v));
    let min_step = values.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    Criterion {
        id: 6,
        title: "Hellinger in [0,1), increasing in separation",
        status: verdict(in_range && min_step > -1e-12),
        detail: format!("1001 steps 0..10, all in [0,1): {in_range}; smallest step {min_step:.2e}; final {:.6}", values[1000]),
    }
}

struct Scale {
    data: Dataset,
    real: bool,
    _keep: Option<tempfile::TempDir>,
}

fn dataset() -> Scale {
    if let Some(dir) = std::env::var_os("CIFAR10_DIR").map(PathBuf::from) {
        match pipeline::load_dataset(&dir) {
            Ok(data) => return Scale { data, real: true, _keep: None },
            Err(e) => println!("CIFAR10_DIR is set but unusable ({e}); falling back to the synthetic stand-in"),
        }
    }
    let tmp = tempfile::tempdir().unwrap();
    cifar::write_synthetic_dataset(tmp.path(), 1000, SEED).unwrap();
    let data = pipeline::load_dataset(tmp.path()).unwrap();
    Scale { data, real: false, _keep: Some(tmp) }
}

fn run(data: &Dataset, out: &Path, pair: [u8; 2], kind: DistanceKind) -> (PipelineOutput, f64) {
    let cfg = PipelineConfig {
        data_dir: PathBuf::new(),
        class_pair: pair,
        kind,
        s: 0.3,
        out_dir: out.to_path_buf(),
        ..Default::default()
    };
    let started = Instant::now();
    let output = pipeline::run_pipeline_with(&cfg, data).unwrap();
    (output, started.elapsed().as_secs_f64())
}

fn cifar_reproduction(scale: &Scale, scratch: &Path) -> (Criterion, Vec<(String, bool)>, Vec<PathBuf>) {
    let mut lines = Vec::new();
    let mut monotone = Vec::new();
    let mut dirs = Vec::new();
    let mut all_ok = true;
    for pair in [[0u8, 5], [2, 5], [3, 5]] {
        for kind in [DistanceKind::Bhattacharyya, DistanceKind::Chernoff] {
            let out = scratch.join(format!("c7_{}_{}_{kind}", pair[0], pair[1]));
            let (o, secs) = run(&scale.data, &out, pair, kind);
            let m = &o.manifest;
            let ratio = m.center_concentration.unwrap_or(f64::NAN);
            let ok = secs < 300.0 && m.window_means[1] > 0.0 && ratio > 1.0 && m.classes.iter().all(|c| c.count == 5000);
            all_ok &= ok;
            lines.push(format!(
                "{}/{} {}: ratio {ratio:.3} (center {:.3e}, ring {:.3e}), {secs:.1}s",
                pair[0],
                pair[1],
                kind.symbol(),
                m.window_means[0],
                m.window_means[1]
            ));
            monotone.push((format!("{pair:?} {kind}"), m.dendrogram_monotone));
            dirs.push(o.manifest_path.parent().unwrap().to_path_buf());
        }
    }
    let (status, prefix) = match (scale.real, all_ok) {
        (true, ok) => (verdict(ok), String::from("CIFAR-10")),
        (false, _) => (
            Status::Unverified,
            format!(
                "CIFAR-10 not available (set CIFAR10_DIR; tarball md5 {}). Synthetic stand-in, N=5000/class, all runs ok: {all_ok}",
                cifar::TARBALL_MD5
            ),
        ),
    };
    let c = Criterion {
        id: 7,
        title: "CIFAR desk-scale reproduction",
        status,
        detail: format!("{prefix}; {}", lines.join("; ")),
    };
    (c, monotone, dirs)
}

fn determinism(scale: &Scale, scratch: &Path, first_dir: &Path) -> Criterion {
    let (second, _) = run(&scale.data, &scratch.join("c8_rerun"), [0, 5], DistanceKind::Bhattacharyya);
    let second_dir = second.manifest_path.parent().unwrap();
    let files = [
        "distance.f64",
        "distance.json",
        "accumulation.f64",
        "dendrogram.json",
        "labels_k3.pgm",
        "labels_k3.legend.json",
        "labels_k10.pgm",
        "labels_k10.legend.json",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(first_dir.join(f)).ok() != std::fs::read(second_dir.join(f)).ok())
        .collect();
    Criterion {
        id: 8,
        title: "determinism across full reruns",
        status: verdict(differing.is_empty()),
        detail: format!(
            "{} payload files compared ({} data), differing: {:?}",
            files.len(),
            if scale.real { "CIFAR-10" } else { "synthetic" },
            differing
        ),
    }
}

fn main() {
    let started = Instant::now();
    let scratch = tempfile::tempdir().unwrap();
    let mut results = vec![trace_consistency(), quadrature_oracle(), reduction_identities(), variant_discriminators()];

    let scale = dataset();
    let (c7, monotone, dirs) = cifar_reproduction(&scale, scratch.path());
    results.push(clustering_oracle(&monotone));
    results.push(hellinger_sweep());
    results.push(c7);
    results.push(determinism(&scale, scratch.path(), &dirs[0]));
    results.sort_by_key(|c| c.id);

    println!();
    for c in &results {
        println!("criterion {} [{}] {}: {}", c.id, c.status, c.title, c.detail);
    }
    let count = |s: Status| results.iter().filter(|c| c.status == s).count();
    println!(
        "acceptance: {} passed, {} failed, {} unverified ({:.0}s)",
        count(Status::Pass),
        count(Status::Fail),
        count(Status::Unverified),
        started.elapsed().as_secs_f64()
    );
    if count(Status::Fail) > 0 {
        std::process::exit(1);
    }
}
