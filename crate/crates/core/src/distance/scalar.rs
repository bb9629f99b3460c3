//! Scalar closed forms, evaluated with Cholesky factorizations so they share
//! no code path with the eigen-based matrix functions used for the matrices.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::{covariance_gap, Variant, COV_EQUAL_TOL};
use crate::error::{Error, Result};
use crate::estimation::GaussianPopulation;

struct Factor(Cholesky<f64, Dyn>);

impl Factor {
    fn new(m: DMatrix<f64>) -> Result<Self> {
        m.cholesky()
            .map(Factor)
            .ok_or(Error::NotPositiveDefinite { lambda_min: f64::NAN })
    }

    fn of_mix(p: &GaussianPopulation, q: &GaussianPopulation, wp: f64, wq: f64) -> Result<Self> {
        Self::new(p.cov.as_matrix() * wp + q.cov.as_matrix() * wq)
    }

    fn ln_det(&self) -> f64 {
        self.0.ln_determinant()
    }

    /// `vᵀ·M⁻¹·v` as `‖L⁻¹v‖²`.
    fn quad(&self, v: &DVector<f64>) -> f64 {
        let y = self
            .0
            .l_dirty()
            .solve_lower_triangular(v)
            .expect("Cholesky factor has a positive diagonal");
        y.norm_squared()
    }

    /// `tr(M⁻¹·B)`.
    fn trace_solve(&self, b: &DMatrix<f64>) -> f64 {
        self.0.solve(b).trace()
    }
}

fn delta(p: &GaussianPopulation, q: &GaussianPopulation) -> Result<DVector<f64>> {
    if p.dim() != q.dim() {
        return Err(Error::DimMismatch { left: p.dim(), right: q.dim() });
    }
    Ok(&p.mean - &q.mean)
}

/// `Δᵀ·Σ⁻¹·Δ`, pooling `Σ = (Σ₁+Σ₂)/2` when the covariances differ. The flag
/// reports whether pooling happened.
pub fn mahalanobis_scalar(p: &GaussianPopulation, q: &GaussianPopulation) -> Result<(f64, bool)> {
    let d = delta(p, q)?;
    if covariance_gap(&p.cov, &q.cov) <= COV_EQUAL_TOL {
        Ok((Factor::new(p.cov.as_matrix().clone())?.quad(&d), false))
    } else {
        Ok((Factor::of_mix(p, q, 0.5, 0.5)?.quad(&d), true))
    }
}

/// `¼·Δᵀ(Σ₁+Σ₂)⁻¹Δ + ½·ln[det Σ̄ / √(det Σ₁ · det Σ₂)]`.
pub fn bhattacharyya_scalar(p: &GaussianPopulation, q: &GaussianPopulation) -> Result<f64> {
    let d = delta(p, q)?;
    let sum = Factor::of_mix(p, q, 1.0, 1.0)?;
    let mean = Factor::of_mix(p, q, 0.5, 0.5)?;
    let l1 = Factor::new(p.cov.as_matrix().clone())?.ln_det();
    let l2 = Factor::new(q.cov.as_matrix().clone())?.ln_det();
    Ok(0.25 * sum.quad(&d) + 0.5 * (mean.ln_det() - 0.5 * l1 - 0.5 * l2))
}

/// How far the trace of the `PaperExact` Bhattacharyya matrix sits from
/// the scalar distance: `½·(ln det Σ₁ + ln det Σ₂)`.
pub fn paper_exact_bhattacharyya_gap(p: &GaussianPopulation, q: &GaussianPopulation) -> Result<f64> {
    let l1 = Factor::new(p.cov.as_matrix().clone())?.ln_det();
    let l2 = Factor::new(q.cov.as_matrix().clone())?.ln_det();
    Ok(0.5 * (l1 + l2))
}

/// `½s(1−s)·ΔᵀΣₛ⁻¹Δ + ½·[ln det Σₛ − (1−s)·ln det Σ₁ − s·ln det Σ₂]`.
pub fn chernoff_scalar(p: &GaussianPopulation, q: &GaussianPopulation, s: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::SOutOfRange(s));
    }
    let d = delta(p, q)?;
    let mix = Factor::of_mix(p, q, 1.0 - s, s)?;
    let l1 = Factor::new(p.cov.as_matrix().clone())?.ln_det();
    let l2 = Factor::new(q.cov.as_matrix().clone())?.ln_det();
    let quad = if s == 0.0 || s == 1.0 { 0.0 } else { 0.5 * s * (1.0 - s) * mix.quad(&d) };
    Ok(quad + 0.5 * (mix.ln_det() - (1.0 - s) * l1 - s * l2))
}

/// KL closed form. `PaperExact`: `½Δᵀ(Σ₁+Σ₂)⁻¹Δ + ½tr(Σ₁⁻¹Σ₂ + Σ₂⁻¹Σ₁) + n`;
/// `Corrected` (Jeffreys): `½Δᵀ(Σ₁⁻¹+Σ₂⁻¹)Δ + ½tr(Σ₁⁻¹Σ₂ + Σ₂⁻¹Σ₁) − n`.
pub fn kl_scalar(p: &GaussianPopulation, q: &GaussianPopulation, variant: Variant) -> Result<f64> {
    let d = delta(p, q)?;
    let n = p.dim() as f64;
    let f1 = Factor::new(p.cov.as_matrix().clone())?;
    let f2 = Factor::new(q.cov.as_matrix().clone())?;
    let ratio = f1.trace_solve(q.cov.as_matrix()) + f2.trace_solve(p.cov.as_matrix());
    Ok(match variant {
        Variant::PaperExact => 0.5 * Factor::of_mix(p, q, 1.0, 1.0)?.quad(&d) + 0.5 * ratio + n,
        Variant::Corrected => 0.5 * (f1.quad(&d) + f2.quad(&d)) + 0.5 * ratio - n,
    })
}

/// `√(1 − exp(−d_B))`. Saturates at 1.0 in `f64` once `d_B` exceeds ~37.
pub fn hellinger_scalar(db: f64) -> Result<f64> {
    if db < 0.0 || db.is_nan() {
        return Err(Error::NegativeInput(db));
    }
    Ok((-(-db).exp_m1()).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarDistanceReport {
    #[serde(rename = "dM")]
    pub d_m: f64,
    #[serde(rename = "dB")]
    pub d_b: f64,
    #[serde(rename = "dC")]
    pub d_c: f64,
    #[serde(rename = "dKL")]
    pub d_kl: f64,
    #[serde(rename = "dH")]
    pub d_h: f64,
    pub s: f64,
    pub variant: Variant,
    /// Mahalanobis used the pooled covariance.
    pub pooled: bool,
    pub ridge: [f64; 2],
}

/// All scalar distances, each straight from its closed form.
pub fn scalar_report(p: &GaussianPopulation, q: &GaussianPopulation, s: f64, variant: Variant) -> Result<ScalarDistanceReport> {
    let (d_m, pooled) = mahalanobis_scalar(p, q)?;
    let d_b = bhattacharyya_scalar(p, q)?;
    let d_c = chernoff_scalar(p, q, s)?;
    let d_kl = kl_scalar(p, q, variant)?;
    // d_B is nonnegative; a rounding-level negative value is read as 0.
    let d_h = hellinger_scalar(d_b.max(0.0))?;
    Ok(ScalarDistanceReport { d_m, d_b, d_c, d_kl, d_h, s, variant, pooled, ridge: [p.ridge, q.ridge] })
}
