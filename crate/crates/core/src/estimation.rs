//! Mean and unbiased covariance estimation for a population of sample vectors.
//!
//! Samples are visited in a canonical order (lexicographic on their values)
//! and every sum is compensated, so the estimate does not depend on the order
//! in which samples were supplied, down to the last bit.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::spd::{regularize, SpdMatrix, SymMatrix};

/// Default relative ridge for image covariances.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// `count` vectors of dimension `dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    dim: usize,
    data: Vec<f64>,
}

impl SampleSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::TooFewSamples(0));
        }
        if data.len() % dim != 0 {
            let index = data.len() / dim;
            return Err(Error::RaggedSamples { index, len: data.len() % dim, expected: dim });
        }
        let count = data.len() / dim;
        if count < 2 {
            return Err(Error::TooFewSamples(count));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(SampleSet { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(dim * rows.len());
        for (index, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::RaggedSamples { index, len: row.len(), expected: dim });
            }
            data.extend_from_slice(row);
        }
        if dim == 0 {
            return Err(Error::TooFewSamples(rows.len()));
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn sample(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn canonical_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.count()).collect();
        order.sort_by(|&a, &b| {
            self.sample(a)
                .iter()
                .zip(self.sample(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        order
    }
}

/// A Gaussian model `N(mean, cov)` fitted to `count` samples.
#[derive(Debug, Clone)]
pub struct GaussianPopulation {
    pub mean: DVector<f64>,
    pub cov: SpdMatrix,
    pub count: usize,
    /// Relative ridge added to the covariance diagonal (times its mean).
    pub ridge: f64,
    /// Free-form description of where the samples came from.
    pub source: String,
}

impl GaussianPopulation {
    pub fn new(mean: DVector<f64>, cov: SpdMatrix, count: usize) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimMismatch { left: mean.len(), right: cov.dim() });
        }
        Ok(GaussianPopulation { mean, cov, count, ridge: 0.0, source: String::from("explicit") })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    #[inline]
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Sample mean and unbiased (`1/(N-1)`) covariance, before any ridge.
pub fn sample_moments(samples: &SampleSet) -> (DVector<f64>, SymMatrix) {
    let n = samples.dim();
    let count = samples.count();
    let order = samples.canonical_order();

    let mut mean = DVector::zeros(n);
    for i in 0..n {
        let mut acc = CompensatedSum::default();
        for &k in &order {
            acc.add(samples.sample(k)[i]);
        }
        mean[i] = acc.value() / count as f64;
    }

    // Centered values, one contiguous row per coordinate.
    let mut centered = vec![0.0; n * count];
    for (pos, &k) in order.iter().enumerate() {
        for (i, v) in samples.sample(k).iter().enumerate() {
            centered[i * count + pos] = v - mean[i];
        }
    }

    let denom = (count - 1) as f64;
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row_i = &centered[i * count..(i + 1) * count];
            (i..n)
                .map(|j| {
                    let row_j = &centered[j * count..(j + 1) * count];
                    let mut acc = CompensatedSum::default();
                    for (a, b) in row_i.iter().zip(row_j) {
                        acc.add(a * b);
                    }
                    acc.value() / denom
                })
                .collect()
        })
        .collect();

    let mut cov = DMatrix::zeros(n, n);
    for (i, row) in upper.iter().enumerate() {
        for (offset, &v) in row.iter().enumerate() {
            let j = i + offset;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let cov = SymMatrix::symmetrized(&cov).expect("covariance is symmetric by construction");
    (mean, cov)
}

/// Fits `N(μ, Σ)` with `Σ` regularized by `ridge · mean(diag Σ) · I`.
pub fn estimate_population(samples: &SampleSet, ridge: f64) -> Result<GaussianPopulation> {
    let (mean, cov) = sample_moments(samples);
    let cov = regularize(&cov, ridge).map_err(|e| match e {
        e @ Error::NegativeRidge(_) => e,
        other => Error::DegenerateSamples(Box::new(other)),
    })?;
    Ok(GaussianPopulation {
        mean,
        cov,
        count: samples.count(),
        ridge,
        source: String::from("samples"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn two_point_set_is_singular() {
        let s = SampleSet::from_rows(&[[0.0, 0.0], [2.0, 2.0]]).unwrap();
        let (mean, cov) = sample_moments(&s);
        assert_eq!(mean.as_slice(), &[1.0, 1.0]);
        assert_eq!(cov.as_matrix().as_slice(), &[2.0, 2.0, 2.0, 2.0]);
        assert!(matches!(estimate_population(&s, 0.0), Err(Error::DegenerateSamples(_))));
        assert!(estimate_population(&s, 1e-3).is_ok());
    }

    #[test]
    fn square_corners() {
        let s = SampleSet::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 0.0]]).unwrap();
        let p = estimate_population(&s, 0.0).unwrap();
        assert_eq!(p.mean.as_slice(), &[0.5, 0.5]);
        let c = p.cov.as_matrix();
        assert!((c[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
        assert!((c[(1, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(c[(0, 1)], 0.0);
        assert_eq!(p.count, 4);
    }

    #[test]
    fn standard_normal_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..20_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let p = estimate_population(&SampleSet::new(2, data).unwrap(), 0.0).unwrap();
        assert!(p.mean.amax() < 0.05);
        let gap = p.cov.as_matrix() - DMatrix::<f64>::identity(2, 2);
        assert!(gap.amax() < 0.1);
    }

    #[test]
    fn rejects_bad_sets() {
        assert!(matches!(SampleSet::from_rows(&[[1.0, 2.0]]), Err(Error::TooFewSamples(1))));
        let ragged: Vec<Vec<f64>> = vec![vec![1.0, 2.0], vec![1.0]];
        assert!(matches!(SampleSet::from_rows(&ragged), Err(Error::RaggedSamples { index: 1, .. })));
    }

    fn random_set(seed: u64, dim: usize, count: usize) -> SampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..dim * count).map(|_| StandardNormal.sample(&mut rng)).collect();
        SampleSet::new(dim, data).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn reordering_is_exact(seed in any::<u64>(), rot in 1usize..20) {
            let s = random_set(seed, 5, 21);
            let rows: Vec<Vec<f64>> = (0..21).map(|k| s.sample((k + rot) % 21).to_vec()).collect();
            let t = SampleSet::from_rows(&rows).unwrap();
            let (m1, c1) = sample_moments(&s);
            let (m2, c2) = sample_moments(&t);
            prop_assert_eq!(m1, m2);
            prop_assert_eq!(c1, c2);
        }

        #[test]
        fn shift_moves_mean_only(seed in any::<u64>(), c in -3.0f64..3.0) {
            let s = random_set(seed, 4, 30);
            let shifted: Vec<f64> = s.as_slice().iter().map(|v| v + c).collect();
            let t = SampleSet::new(4, shifted).unwrap();
            let (m1, c1) = sample_moments(&s);
            let (m2, c2) = sample_moments(&t);
            prop_assert!((m2 - m1.add_scalar(c)).amax() < 1e-10);
            prop_assert!((c2.as_matrix() - c1.as_matrix()).amax() < 1e-10);
        }

        #[test]
        fn covariance_is_bitwise_symmetric(seed in any::<u64>()) {
            let (_, c) = sample_moments(&random_set(seed, 6, 12));
            let m = c.as_matrix();
            prop_assert_eq!(m, &m.transpose());
        }
    }
}
