//! Dense symmetric and symmetric positive-definite matrix functions.
//!
//! Everything that needs a matrix function (inverse, fractional power,
//! logarithm) goes through one certified symmetric eigendecomposition. The
//! eigenpairs of an [`SpdMatrix`] are computed on first use and cached; the
//! cache is a [`OnceLock`], so shared references can be handed to many threads.
//!
//! The logarithm of a product of two SPD matrices is real because `a·b` is
//! similar to the SPD matrix `a^½·b·a^½`; [`log_spd_product`] uses that
//! similarity and never a general (Schur) logarithm.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative symmetry tolerance accepted by [`SymMatrix::new`].
pub const SYM_TOL: f64 = 1e-9;
/// Eigendecomposition certification tolerance (relative to the spectral radius).
pub const EIGEN_TOL: f64 = 1e-10;
/// Smallest `lambda_min / lambda_max` accepted by [`spd_inverse`] on an
/// unregularized matrix.
pub const COND_FLOOR: f64 = 1e-12;

const EIGEN_MAX_ITER: usize = 10_000;

/// Dense real square matrix without structural invariants. Distance matrices
/// are generally asymmetric and live here.
pub type GeneralSquareMatrix = DMatrix<f64>;

/// A real symmetric matrix, symmetric within [`SYM_TOL`] relative to
/// `max(1, max |entry|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    inner: DMatrix<f64>,
}

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NotSquare(format!("{}x{}", m.nrows(), m.ncols())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let scale = m.amax().max(1.0);
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let gap = (m[(i, j)] - m[(j, i)]).abs();
                if gap > SYM_TOL * scale {
                    return Err(Error::NotSymmetric { row: i, col: j, gap });
                }
            }
        }
        Ok(SymMatrix { inner: m })
    }

    /// Builds a matrix from `n*n` row-major values.
    pub fn from_row_major(n: usize, values: &[f64]) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::NotSquare(format!("{} values for n = {n}", values.len())));
        }
        Self::new(DMatrix::from_row_slice(n, n, values))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_row_slice(diag)))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix { inner: DMatrix::identity(n, n) }
    }

    /// Symmetrizes `m` as `(m + mᵀ)/2`, making it exactly symmetric.
    pub fn symmetrized(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NotSquare(format!("{}x{}", m.nrows(), m.ncols())));
        }
        Self::new(symmetrize_exact(m))
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.inner
    }

    pub fn max_abs(&self) -> f64 {
        self.inner.amax()
    }

    pub fn trace(&self) -> f64 {
        self.inner.trace()
    }

    pub fn mean_diagonal(&self) -> f64 {
        self.inner.trace() / self.dim() as f64
    }
}

/// `(m + mᵀ)/2` with the lower triangle copied from the upper one, so the
/// result is bitwise symmetric.
pub(crate) fn symmetrize_exact(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Eigenpairs of a symmetric matrix: eigenvalues in descending order and the
/// matching orthonormal eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl Eigen {
    pub fn lambda_max(&self) -> f64 {
        self.values[0]
    }

    pub fn lambda_min(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// `V · diag(f(λ)) · Vᵀ`, made exactly symmetric.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, &lambda) in self.values.iter().enumerate() {
            let fj = f(lambda);
            scaled.column_mut(j).scale_mut(fj);
        }
        symmetrize_exact(&(scaled * self.vectors.transpose()))
    }

    fn mapped(&self, f: impl Fn(f64) -> f64, reverse: bool) -> Eigen {
        let n = self.values.len();
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        let values = DVector::from_iterator(n, order.iter().map(|&k| f(self.values[k])));
        let vectors = self.vectors.select_columns(order.iter());
        Eigen { values, vectors }
    }
}

/// Symmetric eigendecomposition, sorted descending (stable, ties keep the
/// solver's index order) and certified: `V·diag(λ)·Vᵀ` reproduces the input
/// within `EIGEN_TOL · max(|λ|)` and `VᵀV = I` within `EIGEN_TOL`.
pub fn sym_eigen(m: &SymMatrix) -> Result<Eigen> {
    let n = m.dim();
    let raw = m
        .inner
        .clone()
        .try_symmetric_eigen(f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or(Error::NonConvergence(n))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| raw.eigenvalues[b].total_cmp(&raw.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&k| raw.eigenvalues[k]));
    let vectors = raw.eigenvectors.select_columns(order.iter());
    let eigen = Eigen { values, vectors };
    certify(m, &eigen)?;
    Ok(eigen)
}

fn certify(m: &SymMatrix, eigen: &Eigen) -> Result<()> {
    let n = m.dim();
    let radius = eigen.values.amax().max(f64::MIN_POSITIVE);
    let recon = eigen.map(|l| l);
    let recon_err = (recon - &m.inner).amax();
    if recon_err > EIGEN_TOL * radius {
        return Err(Error::EigenCertification(format!(
            "reconstruction error {recon_err:e} exceeds {:e}",
            EIGEN_TOL * radius
        )));
    }
    let gram = eigen.vectors.transpose() * &eigen.vectors;
    let ortho_err = (gram - DMatrix::<f64>::identity(n, n)).amax();
    if ortho_err > EIGEN_TOL {
        return Err(Error::EigenCertification(format!("orthogonality error {ortho_err:e}")));
    }
    Ok(())
}

// `Error` is not `Clone`, so the cache keeps a cloneable summary of failures.
#[derive(Debug, Clone)]
enum EigenFailure {
    NonConvergence(usize),
    Certification(String),
    NotPositive(f64),
}

impl From<EigenFailure> for Error {
    fn from(f: EigenFailure) -> Self {
        match f {
            EigenFailure::NonConvergence(n) => Error::NonConvergence(n),
            EigenFailure::Certification(s) => Error::EigenCertification(s),
            EigenFailure::NotPositive(lambda_min) => Error::NotPositiveDefinite { lambda_min },
        }
    }
}

/// A symmetric positive-definite matrix with a lazily computed, certified
/// eigendecomposition.
#[derive(Debug)]
pub struct SpdMatrix {
    base: SymMatrix,
    eigen: OnceLock<std::result::Result<Eigen, EigenFailure>>,
    regularized: bool,
}

impl Clone for SpdMatrix {
    fn clone(&self) -> Self {
        let eigen = OnceLock::new();
        if let Some(e) = self.eigen.get() {
            let _ = eigen.set(e.clone());
        }
        SpdMatrix { base: self.base.clone(), eigen, regularized: self.regularized }
    }
}

impl SpdMatrix {
    /// Accepts `m` if its Cholesky factorization exists. The eigendecomposition
    /// is deferred until a matrix function needs it.
    pub fn new(m: SymMatrix) -> Result<Self> {
        if m.inner.clone().cholesky().is_none() {
            let lambda_min = sym_eigen(&m).map(|e| e.lambda_min()).unwrap_or(f64::NAN);
            return Err(Error::NotPositiveDefinite { lambda_min });
        }
        Ok(SpdMatrix { base: m, eigen: OnceLock::new(), regularized: false })
    }

    pub fn from_row_major(n: usize, values: &[f64]) -> Result<Self> {
        Self::new(SymMatrix::from_row_major(n, values)?)
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(SymMatrix::from_diagonal(diag)?)
    }

    pub fn identity(n: usize) -> Self {
        let id = SymMatrix::identity(n);
        let eigen = Eigen { values: DVector::from_element(n, 1.0), vectors: id.inner.clone() };
        Self::with_eigen(id, eigen, false)
    }

    fn with_eigen(base: SymMatrix, eigen: Eigen, regularized: bool) -> Self {
        let cache = OnceLock::new();
        let _ = cache.set(Ok(eigen));
        SpdMatrix { base, eigen: cache, regularized }
    }

    /// Rebuilds a matrix from eigenpairs known to be positive.
    fn from_eigen(eigen: Eigen, regularized: bool) -> Self {
        let base = SymMatrix { inner: eigen.map(|l| l) };
        Self::with_eigen(base, eigen, regularized)
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn as_sym(&self) -> &SymMatrix {
        &self.base
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.base.inner
    }

    /// True when the matrix came out of [`regularize`] with a positive ridge.
    pub fn is_regularized(&self) -> bool {
        self.regularized
    }

    /// The cached eigendecomposition, computing it on first call.
    pub fn eigen(&self) -> Result<&Eigen> {
        let cached = self.eigen.get_or_init(|| match sym_eigen(&self.base) {
            Ok(e) if e.lambda_min() > 0.0 => Ok(e),
            Ok(e) => Err(EigenFailure::NotPositive(e.lambda_min())),
            Err(Error::NonConvergence(n)) => Err(EigenFailure::NonConvergence(n)),
            Err(other) => Err(EigenFailure::Certification(other.to_string())),
        });
        cached.as_ref().map_err(|f| f.clone().into())
    }

    /// `ln det` as the sum of log-eigenvalues.
    pub fn log_det(&self) -> Result<f64> {
        Ok(self.eigen()?.values.iter().map(|l| l.ln()).sum())
    }

    /// Solves `self · x = rhs` through the eigendecomposition, with the same
    /// conditioning rule as [`spd_inverse`].
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let e = self.checked_eigen()?;
        let mut coeffs = e.vectors.tr_mul(rhs);
        for (c, l) in coeffs.iter_mut().zip(e.values.iter()) {
            *c /= l;
        }
        Ok(&e.vectors * coeffs)
    }

    fn checked_eigen(&self) -> Result<&Eigen> {
        let e = self.eigen()?;
        let ratio = e.lambda_min() / e.lambda_max();
        if ratio < COND_FLOOR && !self.regularized {
            return Err(Error::IllConditioned { ratio, floor: COND_FLOOR });
        }
        Ok(e)
    }

    pub(crate) fn with_regularized_flag(mut self, regularized: bool) -> Self {
        self.regularized = regularized;
        self
    }

    /// `w_self·self + w_other·other` for nonnegative weights, not both zero.
    pub fn scaled_sum(&self, other: &SpdMatrix, w_self: f64, w_other: f64) -> Result<SpdMatrix> {
        check_dims(self.dim(), other.dim())?;
        let m = self.as_matrix() * w_self + other.as_matrix() * w_other;
        SpdMatrix::new(SymMatrix { inner: symmetrize_exact(&m) })
    }
}

fn check_dims(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::DimMismatch { left, right });
    }
    Ok(())
}

/// Inverse of an SPD matrix. Unregularized matrices with
/// `lambda_min / lambda_max < COND_FLOOR` are rejected.
pub fn spd_inverse(m: &SpdMatrix) -> Result<SpdMatrix> {
    m.checked_eigen()?;
    spd_power(m, -1.0)
}

/// `m^s` in the eigenbasis of `m`. `s = 0` gives the identity and `s = 1`
/// returns `m` itself.
pub fn spd_power(m: &SpdMatrix, s: f64) -> Result<SpdMatrix> {
    if s == 0.0 {
        return Ok(SpdMatrix::identity(m.dim()));
    }
    if s == 1.0 {
        return Ok(m.clone());
    }
    let e = m.eigen()?;
    let powered = e.mapped(|l| l.powf(s), s < 0.0);
    Ok(SpdMatrix::from_eigen(powered, m.regularized))
}

/// Principal logarithm of an SPD matrix.
pub fn spd_log(m: &SpdMatrix) -> Result<SymMatrix> {
    let e = m.eigen()?;
    Ok(SymMatrix { inner: e.map(f64::ln) })
}

/// Principal logarithm of the (non-symmetric) product `a·b` of two SPD
/// matrices, computed as `a^½ · ln(a^½·b·a^½) · a^-½`.
pub fn log_spd_product(a: &SpdMatrix, b: &SpdMatrix) -> Result<GeneralSquareMatrix> {
    check_dims(a.dim(), b.dim())?;
    let a_half = spd_power(a, 0.5)?;
    let a_neg_half = spd_power(a, -0.5)?;
    let congruence = a_half.as_matrix() * b.as_matrix() * a_half.as_matrix();
    let inner = SpdMatrix::new(SymMatrix { inner: symmetrize_exact(&congruence) })?;
    let log_inner = spd_log(&inner)?;
    Ok(a_half.as_matrix() * log_inner.as_matrix() * a_neg_half.as_matrix())
}

/// `m + ridge · mean(diag m) · I`, required to be positive definite.
pub fn regularize(m: &SymMatrix, ridge: f64) -> Result<SpdMatrix> {
    if !(ridge >= 0.0) {
        return Err(Error::NegativeRidge(ridge));
    }
    let shift = ridge * m.mean_diagonal();
    let mut inner = m.inner.clone();
    for i in 0..m.dim() {
        inner[(i, i)] += shift;
    }
    let shifted = SymMatrix { inner };
    let e = sym_eigen(&shifted)?;
    if !(e.lambda_min() > 0.0) {
        return Err(Error::StillNotPd { ridge, lambda_min: e.lambda_min() });
    }
    Ok(SpdMatrix::with_eigen(shifted, e, ridge > 0.0))
}
