//! Statistical distance matrices between two Gaussian populations.
//!
//! Each scalar distance between `N(μ₁, Σ₁)` and `N(μ₂, Σ₂)` is the trace of a
//! matrix made of a rank-one mean term `c · Δ·(M⁻¹Δ)ᵀ` (with `Δ = μ₁ − μ₂`) and
//! a covariance term. With `Σ̄ = (Σ₁+Σ₂)/2`:
//!
//! ```text
//! D_M  = Δ·Δᵀ·Σ⁻¹                                         (Σ = Σ₁ = Σ₂, or Σ̄ pooled)
//! D_B  = ¼·Δ·Δᵀ·(Σ₁+Σ₂)⁻¹ + ½·[ln Σ̄ − ln(Σ₁^½·Σ₂^½)]
//! D_C  = ½s(1−s)·Δ·Δᵀ·Σₛ⁻¹ + ½·[ln Σₛ − ln(Σ₁^(1−s)·Σ₂^s)]   (Σₛ = (1−s)Σ₁ + sΣ₂)
//! D_KL = ½·Δ·Δᵀ·(Σ₁+Σ₂)⁻¹ + ½·(Σ₁⁻¹Σ₂ + Σ₂⁻¹Σ₁ + 2I)
//! ```
//!
//! Two of these come in two [`Variant`]s. The `PaperExact` Bhattacharyya matrix has
//! exponents `−½` inside the product logarithm, which makes its trace differ
//! from the scalar distance by `½(ln det Σ₁ + ln det Σ₂)`; the `+½` form is the
//! `s = ½` case of `D_C` and is the default. The `PaperExact` KL matrix equals `2I`
//! for identical populations; the corrected form is the symmetrized (Jeffreys)
//! divergence `½·Δ·Δᵀ·(Σ₁⁻¹+Σ₂⁻¹) + ½·(Σ₁⁻¹Σ₂ + Σ₂⁻¹Σ₁ − 2I)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::GaussianPopulation;
use crate::spd::{log_spd_product, spd_inverse, spd_log, spd_power, GeneralSquareMatrix, SpdMatrix};

mod quadrature;
mod scalar;

pub use quadrature::{divergence_integration_oracle, gauss_legendre, QuadratureEstimate};
pub use scalar::{
    bhattacharyya_scalar, chernoff_scalar, hellinger_scalar, kl_scalar, mahalanobis_scalar,
    paper_exact_bhattacharyya_gap, scalar_report, ScalarDistanceReport,
};

/// Relative gap below which two covariances count as equal for Mahalanobis.
pub const COV_EQUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    Mahalanobis,
    Bhattacharyya,
    Chernoff,
    KullbackLeibler,
}

impl DistanceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DistanceKind::Mahalanobis => "mahalanobis",
            DistanceKind::Bhattacharyya => "bhattacharyya",
            DistanceKind::Chernoff => "chernoff",
            DistanceKind::KullbackLeibler => "kullback_leibler",
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            DistanceKind::Mahalanobis => "M",
            DistanceKind::Bhattacharyya => "B",
            DistanceKind::Chernoff => "C",
            DistanceKind::KullbackLeibler => "KL",
        }
    }
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistanceKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "m" | "mahalanobis" => Ok(DistanceKind::Mahalanobis),
            "b" | "bhattacharyya" => Ok(DistanceKind::Bhattacharyya),
            "c" | "chernoff" => Ok(DistanceKind::Chernoff),
            "kl" | "kullback_leibler" | "kullback-leibler" => Ok(DistanceKind::KullbackLeibler),
            other => Err(format!("unknown distance kind `{other}`")),
        }
    }
}

/// Which form of the Bhattacharyya and KL matrices to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Alternative forms: KL carries `+2I` in its covariance term and
    /// the Bhattacharyya log term uses `Σ^{-1/2}` factors.
    PaperExact,
    /// Forms whose trace equals the defining integral.
    #[default]
    Corrected,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::PaperExact => "paper_exact",
            Variant::Corrected => "corrected",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "paper_exact" | "paper" => Ok(Variant::PaperExact),
            "corrected" => Ok(Variant::Corrected),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

/// A matrix-valued distance together with everything needed to reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub kind: DistanceKind,
    /// Chernoff exponent; 0.5 for Bhattacharyya, unused otherwise.
    pub s: f64,
    pub variant: Variant,
    /// Mahalanobis used `Σ = (Σ₁+Σ₂)/2`.
    pub pooled: bool,
    /// Ridges the two populations were estimated with.
    pub ridge: [f64; 2],
    pub matrix: GeneralSquareMatrix,
}

impl DistanceMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    fn build(kind: DistanceKind, s: f64, variant: Variant, p: &GaussianPopulation, q: &GaussianPopulation, matrix: DMatrix<f64>) -> Self {
        DistanceMatrix { kind, s, variant, pooled: false, ridge: [p.ridge, q.ridge], matrix }
    }
}

fn check_pair(p: &GaussianPopulation, q: &GaussianPopulation) -> Result<DVector<f64>> {
    if p.dim() != q.dim() {
        return Err(Error::DimMismatch { left: p.dim(), right: q.dim() });
    }
    Ok(&p.mean - &q.mean)
}

/// Adds `coef · Δ·wᵀ` to `out`.
fn add_rank_one(out: &mut DMatrix<f64>, coef: f64, delta: &DVector<f64>, w: &DVector<f64>) {
    if coef == 0.0 {
        return;
    }
    out.ger(coef, delta, w, 1.0);
}

/// `max |Σ₁ − Σ₂| / max(|Σ₁|, |Σ₂|)`.
pub fn covariance_gap(a: &SpdMatrix, b: &SpdMatrix) -> f64 {
    let scale = a.as_matrix().amax().max(b.as_matrix().amax()).max(f64::MIN_POSITIVE);
    (a.as_matrix() - b.as_matrix()).amax() / scale
}

/// Mahalanobis distance matrix `Δ·Δᵀ·Σ⁻¹`. Requires equal covariances unless
/// `pooled`, in which case `Σ = (Σ₁+Σ₂)/2`.
pub fn mahalanobis_matrix(p: &GaussianPopulation, q: &GaussianPopulation, pooled: bool) -> Result<DistanceMatrix> {
    let delta = check_pair(p, q)?;
    let sigma = if pooled {
        p.cov.scaled_sum(&q.cov, 0.5, 0.5)?.with_regularized_flag(p.cov.is_regularized() || q.cov.is_regularized())
    } else {
        let gap = covariance_gap(&p.cov, &q.cov);
        if gap > COV_EQUAL_TOL {
            return Err(Error::CovMismatch { gap });
        }
        p.cov.clone()
    };
    let w = sigma.solve(&delta)?;
    let n = p.dim();
    let mut matrix = DMatrix::zeros(n, n);
    add_rank_one(&mut matrix, 1.0, &delta, &w);
    let mut out = DistanceMatrix::build(DistanceKind::Mahalanobis, 0.0, Variant::Corrected, p, q, matrix);
    out.pooled = pooled;
    Ok(out)
}

fn regularized_any(p: &GaussianPopulation, q: &GaussianPopulation) -> bool {
    p.cov.is_regularized() || q.cov.is_regularized()
}

/// Bhattacharyya distance matrix.
pub fn bhattacharyya_matrix(p: &GaussianPopulation, q: &GaussianPopulation, variant: Variant) -> Result<DistanceMatrix> {
    let delta = check_pair(p, q)?;
    let flag = regularized_any(p, q);
    let sum = p.cov.scaled_sum(&q.cov, 1.0, 1.0)?.with_regularized_flag(flag);
    let mean_cov = p.cov.scaled_sum(&q.cov, 0.5, 0.5)?.with_regularized_flag(flag);

    let exponent = match variant {
        Variant::Corrected => 0.5,
        Variant::PaperExact => -0.5,
    };
    let root1 = spd_power(&p.cov, exponent)?;
    let root2 = spd_power(&q.cov, exponent)?;
    let mut matrix = log_spd_product(&root1, &root2)?;
    matrix -= spd_log(&mean_cov)?.as_matrix();
    matrix *= -0.5;

    let w = sum.solve(&delta)?;
    add_rank_one(&mut matrix, 0.25, &delta, &w);
    Ok(DistanceMatrix::build(DistanceKind::Bhattacharyya, 0.5, variant, p, q, matrix))
}

/// Chernoff distance matrix for exponent `s ∈ [0, 1]` (weight `s` on `p`).
pub fn chernoff_matrix(p: &GaussianPopulation, q: &GaussianPopulation, s: f64) -> Result<DistanceMatrix> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::SOutOfRange(s));
    }
    let delta = check_pair(p, q)?;
    let mix = p.cov.scaled_sum(&q.cov, 1.0 - s, s)?.with_regularized_flag(regularized_any(p, q));

    let left = spd_power(&p.cov, 1.0 - s)?;
    let right = spd_power(&q.cov, s)?;
    let mut matrix = log_spd_product(&left, &right)?;
    matrix -= spd_log(&mix)?.as_matrix();
    matrix *= -0.5;

    let coef = 0.5 * s * (1.0 - s);
    if coef != 0.0 {
        let w = mix.solve(&delta)?;
        add_rank_one(&mut matrix, coef, &delta, &w);
    }
    Ok(DistanceMatrix::build(DistanceKind::Chernoff, s, Variant::Corrected, p, q, matrix))
}

/// Kullback–Leibler distance matrix.
pub fn kl_matrix(p: &GaussianPopulation, q: &GaussianPopulation, variant: Variant) -> Result<DistanceMatrix> {
    let delta = check_pair(p, q)?;
    let n = p.dim();

    // Σ₁⁻¹Σ₂ + Σ₂⁻¹Σ₁; exactly 2I when the covariances are bitwise equal.
    let mut matrix = if p.cov.as_matrix() == q.cov.as_matrix() {
        DMatrix::identity(n, n) * 2.0
    } else {
        let inv1 = spd_inverse(&p.cov)?;
        let inv2 = spd_inverse(&q.cov)?;
        inv1.as_matrix() * q.cov.as_matrix() + inv2.as_matrix() * p.cov.as_matrix()
    };
    let shift = match variant {
        Variant::PaperExact => 2.0,
        Variant::Corrected => -2.0,
    };
    for i in 0..n {
        matrix[(i, i)] += shift;
    }
    matrix *= 0.5;

    if delta.iter().any(|&d| d != 0.0) {
        let w = match variant {
            Variant::PaperExact => {
                let sum = p.cov.scaled_sum(&q.cov, 1.0, 1.0)?.with_regularized_flag(regularized_any(p, q));
                sum.solve(&delta)?
            }
            Variant::Corrected => p.cov.solve(&delta)? + q.cov.solve(&delta)?,
        };
        add_rank_one(&mut matrix, 0.5, &delta, &w);
    }
    Ok(DistanceMatrix::build(DistanceKind::KullbackLeibler, 0.0, variant, p, q, matrix))
}

/// Builds the matrix for `kind`. `s` is only read for Chernoff; Mahalanobis
/// pools the covariances when `pooled` is set.
pub fn distance_matrix(
    p: &GaussianPopulation,
    q: &GaussianPopulation,
    kind: DistanceKind,
    s: f64,
    variant: Variant,
    pooled: bool,
) -> Result<DistanceMatrix> {
    match kind {
        DistanceKind::Mahalanobis => mahalanobis_matrix(p, q, pooled),
        DistanceKind::Bhattacharyya => bhattacharyya_matrix(p, q, variant),
        DistanceKind::Chernoff => chernoff_matrix(p, q, s),
        DistanceKind::KullbackLeibler => kl_matrix(p, q, variant),
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use crate::spd::SymMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn population(mean: &[f64], cov: &[f64]) -> GaussianPopulation {
        let n = mean.len();
        let cov = SpdMatrix::from_row_major(n, cov).unwrap();
        GaussianPopulation::new(DVector::from_row_slice(mean), cov, 100).unwrap()
    }

    /// Random pair with eigenvalues in [0.2, 5] and means in [-1, 1]^n.
    pub fn random_pair(n: usize, seed: u64) -> (GaussianPopulation, GaussianPopulation) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let make = |rng: &mut ChaCha8Rng| {
            let g = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
            let q = g.qr().q();
            let l = DVector::from_fn(n, |_, _| 0.2 + 4.8 * rng.random::<f64>());
            let cov = SymMatrix::symmetrized(&(&q * DMatrix::from_diagonal(&l) * q.transpose())).unwrap();
            let mean = DVector::from_fn(n, |_, _| 2.0 * rng.random::<f64>() - 1.0);
            GaussianPopulation::new(mean, SpdMatrix::new(cov).unwrap(), 100).unwrap()
        };
        let p = make(&mut rng);
        let q = make(&mut rng);
        (p, q)
    }
}
