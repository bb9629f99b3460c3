//! Self-check suite on seeded synthetic inputs.
//!
//! `Fast` covers the trace identities up to n = 16, reductions, variant
//! discriminators, the clustering oracle up to 8 leaves and artifact round
//! trips. `Full` adds the quadrature oracles and an n = 1024 timing run.

use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::accumulation;
use crate::clustering::{self, Dissimilarity};
use crate::distance::{self, DistanceKind, Variant};
use crate::error::Result;
use crate::estimation::GaussianPopulation;
use crate::io;
use crate::pipeline::trace_check;
use crate::spd::{SpdMatrix, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Fast,
    Full,
}

impl std::str::FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fast" => Ok(Level::Fast),
            "full" => Ok(Level::Full),
            other => Err(format!("unknown level `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst residual observed.
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<44} measured={:.3e} tol={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance
        )?;
        if !self.detail.is_empty() {
            write!(f, "  {}", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub level: Level,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Check {
    Check { name: name.into(), passed: measured <= tolerance, measured, tolerance, detail: detail.into() }
}

/// A seeded pair of Gaussians: eigenvalues uniform in `[lo, hi]`, random
/// orthogonal eigenvectors, means uniform in `[-1, 1]ⁿ`.
pub fn random_pair(n: usize, lo: f64, hi: f64, seed: u64) -> (GaussianPopulation, GaussianPopulation) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = random_population(n, lo, hi, &mut rng);
    let q = random_population(n, lo, hi, &mut rng);
    (p, q)
}

pub fn random_population(n: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> GaussianPopulation {
    let g = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
    let q = g.qr().q();
    let l = DVector::from_fn(n, |_, _| lo + (hi - lo) * rng.random::<f64>());
    let cov = SymMatrix::symmetrized(&(&q * DMatrix::from_diagonal(&l) * q.transpose()))
        .and_then(SpdMatrix::new)
        .expect("random SPD construction");
    let mean = DVector::from_fn(n, |_, _| 2.0 * rng.random::<f64>() - 1.0);
    GaussianPopulation::new(mean, cov, 0).expect("dimensions agree").with_source("random")
}

/// Symmetric dissimilarity whose off-diagonal entries are a shuffled range of
/// distinct values (no ties).
pub fn random_dissimilarity(d: usize, seed: u64) -> Dissimilarity {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values: Vec<f64> = (0..d * (d - 1) / 2).map(|k| k as f64 * 0.5 - 3.0).collect();
    values.shuffle(&mut rng);
    let mut it = values.into_iter();
    Dissimilarity::from_fn(d, |_, _| it.next().expect("enough values")).expect("finite")
}

/// Worst `|tr D − scalar| / (1 + |scalar|)` over `pairs` random pairs per `n`.
pub fn trace_residuals(dims: &[usize], pairs: usize, seed: u64) -> Result<Vec<(String, f64)>> {
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut record = |name: String, r: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some((_, w)) => *w = w.max(r),
        None => worst.push((name, r)),
    };
    for &n in dims {
        for k in 0..pairs {
            let (p, q) = random_pair(n, 0.2, 5.0, seed ^ ((n as u64) << 32) ^ k as u64);
            let cases = [
                (DistanceKind::Mahalanobis, 0.0, Variant::Corrected),
                (DistanceKind::Bhattacharyya, 0.5, Variant::Corrected),
                (DistanceKind::Chernoff, 0.1, Variant::Corrected),
                (DistanceKind::Chernoff, 0.3, Variant::Corrected),
                (DistanceKind::Chernoff, 0.5, Variant::Corrected),
                (DistanceKind::Chernoff, 0.9, Variant::Corrected),
                (DistanceKind::KullbackLeibler, 0.0, Variant::PaperExact),
            ];
            for (kind, s, variant) in cases {
                let d = distance::distance_matrix(&p, &q, kind, s, variant, true)?;
                let name = match kind {
                    DistanceKind::Chernoff => format!("trace {} s={s}", kind.symbol()),
                    _ => format!("trace {}", kind.symbol()),
                };
                record(name, trace_check(&d, &p, &q)?.relative_residual);
            }
        }
    }
    Ok(worst)
}

fn reductions(seed: u64) -> Result<Vec<Check>> {
    let mut worst_c05 = 0.0f64;
    let mut worst_edges = 0.0f64;
    let mut worst_eighth = 0.0f64;
    for k in 0..10 {
        let (p, q) = random_pair(2 + k % 8, 0.2, 5.0, seed + k as u64);
        let b = distance::bhattacharyya_matrix(&p, &q, Variant::Corrected)?.matrix;
        let c = distance::chernoff_matrix(&p, &q, 0.5)?.matrix;
        worst_c05 = worst_c05.max((&b - &c).amax());
        for s in [0.0, 1.0] {
            worst_edges = worst_edges.max(distance::chernoff_matrix(&p, &q, s)?.trace().abs());
        }
        let mut q_same = p.clone();
        q_same.mean = q.mean.clone();
        let tb = distance::bhattacharyya_matrix(&p, &q_same, Variant::Corrected)?.trace();
        let tm = distance::mahalanobis_matrix(&p, &q_same, false)?.trace();
        worst_eighth = worst_eighth.max((tb - tm / 8.0).abs());
    }
    Ok(vec![
        check("chernoff s=0.5 equals bhattacharyya", worst_c05, 1e-10, "max elementwise gap"),
        check("chernoff trace at s in {0,1}", worst_edges, 1e-10, ""),
        check("equal covariances: tr D_B = tr D_M / 8", worst_eighth, 1e-10, ""),
    ])
}

fn discriminators(seed: u64) -> Result<Vec<Check>> {
    let mut b_zero = 0.0f64;
    let mut kl_2n = 0.0f64;
    let mut kl_zero = 0.0f64;
    let mut detector = 0.0f64;
    for k in 0..10 {
        let n = 2 + k % 8;
        let (p, q) = random_pair(n, 0.2, 5.0, seed + k as u64);
        b_zero = b_zero.max(distance::bhattacharyya_matrix(&p, &p, Variant::Corrected)?.trace().abs());
        kl_2n = kl_2n.max((distance::kl_matrix(&p, &p, Variant::PaperExact)?.trace() - 2.0 * n as f64).abs());
        kl_zero = kl_zero.max(distance::kl_matrix(&p, &p, Variant::Corrected)?.trace().abs());
        let exact = distance::bhattacharyya_matrix(&p, &q, Variant::PaperExact)?;
        let tc = trace_check(&exact, &p, &q)?;
        detector = detector.max(((tc.trace - tc.scalar) - tc.expected_gap).abs() / (1.0 + tc.scalar.abs()));
    }
    Ok(vec![
        check("p=q: tr D_B (corrected) = 0", b_zero, 1e-10, ""),
        check("p=q: tr D_KL (paper_exact) = 2n exactly", kl_2n, 0.0, ""),
        check("p=q: tr D_KL (corrected) = 0", kl_zero, 1e-10, ""),
        check("paper_exact D_B gap = (ln|S1|+ln|S2|)/2", detector, 1e-8, "discrepancy detector"),
    ])
}

/// Exact merge-list agreement against the exhaustive reference, plus the
/// accelerated path and monotonicity.
pub fn clustering_oracle(max_leaves: usize, cases: usize, seed: u64) -> Result<Check> {
    let mut mismatches = 0usize;
    for k in 0..cases {
        let d = 2 + k % (max_leaves - 1);
        let delta = random_dissimilarity(d, seed + k as u64);
        let dn = clustering::agglomerate(&delta)?;
        let ok = dn == clustering::reference_complete_linkage(&delta)?
            && dn == clustering::agglomerate_fast(&delta)?
            && dn.is_monotone();
        mismatches += usize::from(!ok);
    }
    Ok(check(
        &format!("clustering oracle d<={max_leaves}"),
        mismatches as f64,
        0.0,
        format!("{cases} matrices, mismatches counted"),
    ))
}

/// `d_H` over mean separations `0..=10` at a fixed covariance. Returns the
/// largest `d_H[k] − d_H[k+1]` (negative when strictly increasing) and
/// whether every value lies in `[0, 1)`.
pub fn hellinger_sweep(steps: usize) -> Result<(f64, bool)> {
    let base = random_pair(3, 0.5, 2.0, 77).0;
    let dir = DVector::from_row_slice(&[1.0, 1.0, 1.0]).normalize();
    let mut prev = f64::NEG_INFINITY;
    let mut max_drop = f64::NEG_INFINITY;
    let mut in_range = true;
    for i in 0..=steps {
        let t = 10.0 * i as f64 / steps as f64;
        let mut q = base.clone();
        q.mean = &base.mean + &dir * t;
        let db = distance::bhattacharyya_matrix(&base, &q, Variant::Corrected)?.trace();
        let dh = distance::hellinger_scalar(db.max(0.0))?;
        in_range &= (0.0..1.0).contains(&dh);
        if i > 0 {
            max_drop = max_drop.max(prev - dh);
        }
        prev = dh;
    }
    Ok((max_drop, in_range))
}

struct ScratchDir(PathBuf);

impl ScratchDir {
    fn new() -> Result<Self> {
        let nanos = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
        let dir = std::env::temp_dir().join(format!("mandala-verify-{}-{nanos}", std::process::id()));
        std::fs::create_dir_all(&dir).map_err(|e| crate::Error::io(format!("creating {}", dir.display()), e))?;
        Ok(ScratchDir(dir))
    }
}

impl Drop for ScratchDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn round_trips(seed: u64) -> Result<Check> {
    let scratch = ScratchDir::new()?;
    let dir = &scratch.0;
    let (p, q) = random_pair(16, 0.2, 5.0, seed);
    let mut failures = Vec::new();

    let header = io::save_population(&dir.join("p"), &p)?;
    let back = io::load_population(&header)?;
    if back.mean != p.mean || back.cov.as_matrix() != p.cov.as_matrix() {
        failures.push("population");
    }
    let d = distance::chernoff_matrix(&p, &q, 0.3)?;
    let back = io::load_distance_matrix(&io::save_distance_matrix(&dir.join("d"), &d)?)?;
    if back != d {
        failures.push("distance matrix");
    }
    let img = accumulation::devectorize(&accumulation::accumulate(&d), 4)?;
    if accumulation::import(&accumulation::export(&img, &dir.join("phi"))?)? != img {
        failures.push("accumulation");
    }
    if accumulation::devectorize(&accumulation::vectorize(&img), 4)? != img {
        failures.push("vectorize");
    }
    let dn = clustering::agglomerate(&clustering::symmetrize(&d.matrix, clustering::SymmetrizeMode::Mean)?)?;
    dn.save(&dir.join("dn.json"))?;
    if clustering::Dendrogram::load(&dir.join("dn.json"))? != dn {
        failures.push("dendrogram");
    }
    Ok(check("artifact round trips", failures.len() as f64, 0.0, failures.join(", ")))
}

fn quadrature_checks(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut wb, mut wc, mut wk) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..6 {
        let n = 1 + k % 2;
        let p = random_population(n, 0.3, 3.0, &mut rng);
        let q = random_population(n, 0.3, 3.0, &mut rng);
        let quad = |kind, s| distance::divergence_integration_oracle(&p, &q, kind, s).map(|e| e.value);
        wb = wb.max((quad(DistanceKind::Bhattacharyya, 0.5)? - distance::bhattacharyya_scalar(&p, &q)?).abs());
        wc = wc.max((quad(DistanceKind::Chernoff, 0.3)? - distance::chernoff_scalar(&p, &q, 0.3)?).abs());
        wk = wk.max((quad(DistanceKind::KullbackLeibler, 0.0)? - distance::kl_scalar(&p, &q, Variant::Corrected)?).abs());
    }
    Ok(vec![
        check("quadrature vs closed form: D_B", wb, 1e-4, "1-D and 2-D"),
        check("quadrature vs closed form: D_C s=0.3", wc, 1e-4, "1-D and 2-D"),
        check("quadrature vs closed form: D_KL corrected", wk, 1e-3, "1-D and 2-D"),
    ])
}

fn large_smoke(seed: u64) -> Result<Check> {
    let started = Instant::now();
    let (p, q) = random_pair(1024, 0.05, 2.0, seed);
    let d = distance::bhattacharyya_matrix(&p, &q, Variant::Corrected)?;
    let residual = trace_check(&d, &p, &q)?.relative_residual;
    let img = accumulation::devectorize(&accumulation::accumulate(&d), 32)?;
    let dn = clustering::agglomerate(&clustering::symmetrize(&d.matrix, clustering::SymmetrizeMode::Mean)?)?;
    clustering::cut(&dn, 10)?;
    let secs = started.elapsed().as_secs_f64();
    let mut c = check("n=1024 smoke run (trace residual)", residual, 1e-8, format!("{secs:.1}s, side {}", img.side));
    c.passed &= dn.is_monotone();
    Ok(c)
}

pub fn run(level: Level, seed: u64) -> Result<Report> {
    let mut checks = Vec::new();
    let dims: &[usize] = &[2, 4, 8, 16];
    for (name, r) in trace_residuals(dims, 10, seed)? {
        checks.push(check(&name, r, 1e-8, "n <= 16, relative"));
    }
    checks.extend(reductions(seed)?);
    checks.extend(discriminators(seed)?);
    checks.push(clustering_oracle(8, 200, seed)?);
    let (max_drop, in_range) = hellinger_sweep(200)?;
    let mut h = check("hellinger sweep strictly increasing", max_drop, 1e-12, "largest step-to-step drop");
    h.passed = max_drop < 1e-12 && in_range;
    checks.push(h);
    checks.push(round_trips(seed)?);
    if level == Level::Full {
        checks.extend(quadrature_checks(seed)?);
        checks.push(large_smoke(seed)?);
    }
    Ok(Report { level, checks })
}
