//! Direct numerical integration of the divergence definitions for n ≤ 3.
//!
//! Only used to check the closed forms. The integrand is evaluated on a
//! tensor-product Gauss–Legendre grid over a box extending 10 standard
//! deviations past both means on each axis; the mass outside that box is
//! below 1e-20. The grid is evaluated once as a single panel and once split
//! into two panels per axis; the finer value is returned and the difference
//! is reported as the error estimate.

use nalgebra::DMatrix;

use super::DistanceKind;
use crate::error::{Error, Result};
use crate::estimation::GaussianPopulation;

const BOX_SIGMAS: f64 = 10.0;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Three-term recurrence for P_n(x) and P_{n-1}(x).
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureEstimate {
    pub value: f64,
    /// `|fine − coarse|` between the one- and two-panel rules.
    pub error_estimate: f64,
    pub nodes_per_axis: usize,
}

struct LogDensity {
    mean: Vec<f64>,
    precision: Vec<f64>,
    offset: f64,
}

impl LogDensity {
    fn new(p: &GaussianPopulation) -> Result<Self> {
        let n = p.dim();
        let chol = p
            .cov
            .as_matrix()
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { lambda_min: f64::NAN })?;
        let precision = chol.inverse();
        let offset = -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + chol.ln_determinant());
        Ok(LogDensity { mean: p.mean.iter().copied().collect(), precision: row_major(&precision), offset })
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let n = self.mean.len();
        let mut q = 0.0;
        for i in 0..n {
            let di = x[i] - self.mean[i];
            for j in 0..n {
                q += di * self.precision[i * n + j] * (x[j] - self.mean[j]);
            }
        }
        self.offset - 0.5 * q
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Integrates the defining integral of `kind` between `p` and `q`:
/// `−ln ∫ p^½ q^½` (Bhattacharyya), `−ln ∫ p^s q^(1−s)` (Chernoff) or
/// `∫ (p − q) ln(p/q)` (Kullback–Leibler, symmetrized).
pub fn divergence_integration_oracle(
    p: &GaussianPopulation,
    q: &GaussianPopulation,
    kind: DistanceKind,
    s: f64,
) -> Result<QuadratureEstimate> {
    let n = p.dim();
    if n != q.dim() {
        return Err(Error::DimMismatch { left: n, right: q.dim() });
    }
    if n > 3 {
        return Err(Error::DimensionTooLarge(n));
    }
    let exponent = match kind {
        DistanceKind::Bhattacharyya => 0.5,
        DistanceKind::Chernoff if (0.0..=1.0).contains(&s) => s,
        DistanceKind::Chernoff => return Err(Error::SOutOfRange(s)),
        DistanceKind::KullbackLeibler => f64::NAN,
        DistanceKind::Mahalanobis => {
            return Err(Error::Unsupported(String::from("Mahalanobis has no integral definition")))
        }
    };

    let lp = LogDensity::new(p)?;
    let lq = LogDensity::new(q)?;
    let integrand = |x: &[f64]| -> f64 {
        let a = lp.eval(x);
        let b = lq.eval(x);
        if kind == DistanceKind::KullbackLeibler {
            (a.exp() - b.exp()) * (a - b)
        } else {
            (exponent * a + (1.0 - exponent) * b).exp()
        }
    };

    let bounds: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let s1 = p.cov.as_matrix()[(k, k)].sqrt() * BOX_SIGMAS;
            let s2 = q.cov.as_matrix()[(k, k)].sqrt() * BOX_SIGMAS;
            ((p.mean[k] - s1).min(q.mean[k] - s2), (p.mean[k] + s1).max(q.mean[k] + s2))
        })
        .collect();

    let base = if n <= 2 { 200 } else { 80 };
    let coarse = tensor_rule(&integrand, &bounds, base, 1);
    let fine = tensor_rule(&integrand, &bounds, base, 2);
    let finish = |integral: f64| {
        if kind == DistanceKind::KullbackLeibler {
            integral
        } else {
            -integral.ln()
        }
    };
    let value = finish(fine);
    Ok(QuadratureEstimate {
        value,
        error_estimate: (value - finish(coarse)).abs(),
        nodes_per_axis: 2 * base,
    })
}

/// Composite tensor Gauss–Legendre with `panels` equal panels per axis.
fn tensor_rule(f: &impl Fn(&[f64]) -> f64, bounds: &[(f64, f64)], nodes: usize, panels: usize) -> f64 {
    let (x, w) = gauss_legendre(nodes);
    let axes: Vec<Vec<(f64, f64)>> = bounds
        .iter()
        .map(|&(lo, hi)| {
            let width = (hi - lo) / panels as f64;
            (0..panels)
                .flat_map(|p| {
                    let a = lo + p as f64 * width;
                    x.iter().zip(&w).map(move |(&xi, &wi)| (a + 0.5 * width * (xi + 1.0), 0.5 * width * wi))
                })
                .collect()
        })
        .collect();

    let dims = axes.len();
    let per_axis = axes[0].len();
    let mut idx = vec![0usize; dims];
    let mut point = vec![0.0; dims];
    let mut total = 0.0;
    loop {
        let mut weight = 1.0;
        for d in 0..dims {
            let (xd, wd) = axes[d][idx[d]];
            point[d] = xd;
            weight *= wd;
        }
        total += weight * f(&point);

        let mut d = 0;
        loop {
            idx[d] += 1;
            if idx[d] < per_axis {
                break;
            }
            idx[d] = 0;
            d += 1;
            if d == dims {
                return total;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::population;
    use super::*;

    #[test]
    fn legendre_rule_integrates_polynomials() {
        let (x, w) = gauss_legendre(7);
        let sum: f64 = w.iter().sum();
        assert!((sum - 2.0).abs() < 1e-14);
        // ∫ x^12 dx over [-1, 1] = 2/13, exact for 7 nodes.
        let m: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(12)).sum();
        assert!((m - 2.0 / 13.0).abs() < 1e-14);
        let (x, _) = gauss_legendre(200);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn bhattacharyya_identical_is_zero() {
        let p = population(&[0.0], &[1.0]);
        let est = divergence_integration_oracle(&p, &p, DistanceKind::Bhattacharyya, 0.5).unwrap();
        assert!(est.value.abs() < 1e-6);
    }

    #[test]
    fn bhattacharyya_matches_closed_form() {
        let p = population(&[0.0], &[1.0]);
        let q = population(&[1.0], &[2.0]);
        let est = divergence_integration_oracle(&p, &q, DistanceKind::Bhattacharyya, 0.5).unwrap();
        let closed = 1.0 / 12.0 + 0.5 * (1.5 / 2f64.sqrt()).ln();
        assert!((est.value - closed).abs() < 1e-4);
        assert!(est.error_estimate < 1e-5);
    }

    #[test]
    fn product_densities_tensorize() {
        let p1 = population(&[0.0], &[1.0]);
        let q1 = population(&[1.0], &[2.0]);
        let p2 = population(&[0.5], &[0.5]);
        let q2 = population(&[-0.5], &[1.5]);
        let p = population(&[0.0, 0.5], &[1.0, 0.0, 0.0, 0.5]);
        let q = population(&[1.0, -0.5], &[2.0, 0.0, 0.0, 1.5]);
        for (kind, s) in [(DistanceKind::Bhattacharyya, 0.5), (DistanceKind::Chernoff, 0.3), (DistanceKind::KullbackLeibler, 0.0)] {
            let joint = divergence_integration_oracle(&p, &q, kind, s).unwrap().value;
            let a = divergence_integration_oracle(&p1, &q1, kind, s).unwrap().value;
            let b = divergence_integration_oracle(&p2, &q2, kind, s).unwrap().value;
            assert!((joint - a - b).abs() < 1e-4, "{kind}: {joint} vs {}", a + b);
        }
    }

    #[test]
    fn three_dimensions_run_and_four_do_not() {
        let p = population(&[0.0, 0.0, 0.0], &[1.0, 0.2, 0.0, 0.2, 1.0, 0.1, 0.0, 0.1, 1.0]);
        let est = divergence_integration_oracle(&p, &p, DistanceKind::KullbackLeibler, 0.0).unwrap();
        assert!(est.value.abs() < 1e-8);
        let p4 = population(&[0.0; 4], &DMatrix::<f64>::identity(4, 4).as_slice().to_vec());
        assert!(matches!(
            divergence_integration_oracle(&p4, &p4, DistanceKind::Bhattacharyya, 0.5),
            Err(Error::DimensionTooLarge(4))
        ));
    }
}
