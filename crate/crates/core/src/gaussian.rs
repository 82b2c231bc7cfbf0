//! Multivariate normal densities, sampling and rectangle probabilities.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A non-degenerate normal distribution with a cached Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    lower: DMatrix<f64>,
    log_norm: f64,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, found: cov.nrows() });
        }
        let lower = cov.clone().cholesky().ok_or(Error::SingularCovariance)?.unpack();
        let log_det_half: f64 = lower.diagonal().iter().map(|v| v.ln()).sum();
        if !log_det_half.is_finite() {
            return Err(Error::SingularCovariance);
        }
        Ok(Self { mean, cov, lower, log_norm: 0.5 * d as f64 * LN_2PI + log_det_half })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower Cholesky factor `L` with `L Lᵀ = cov`.
    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    #[allow(clippy::needless_range_loop)]
    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        debug_assert_eq!(x.len(), d);
        // forward substitution for L y = x - m
        let mut y = [0.0f64; 8];
        let mut heap;
        let y: &mut [f64] = if d <= 8 {
            &mut y[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut quad = 0.0;
        for i in 0..d {
            let mut acc = x[i] - self.mean[i];
            for j in 0..i {
                acc -= self.lower[(i, j)] * y[j];
            }
            y[i] = acc / self.lower[(i, i)];
            quad += y[i] * y[i];
        }
        -0.5 * quad - self.log_norm
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        self.log_pdf(x).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        &self.mean + &self.lower * z
    }
}

/// Standard normal cumulative distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    if z == f64::INFINITY {
        1.0
    } else if z == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * erfc(-z / std::f64::consts::SQRT_2)
    }
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z - 0.5 * LN_2PI).exp()
}

// 5-point Gauss-Legendre on [-1, 1]
const GL_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

/// Composite 5-point Gauss-Legendre quadrature of `f` over `[a, b]` with
/// panels no wider than `max_width`.
pub fn gauss_legendre<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, max_width: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let panels = ((b - a) / max_width).ceil().max(1.0) as usize;
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        let half = 0.5 * h;
        let s: f64 = GL_NODES.iter().zip(GL_WEIGHTS).map(|(x, w)| w * f(mid + half * x)).sum();
        total += s * half;
    }
    total
}

/// Probability that `N(mean, cov)` falls in the box `[lower, upper)`.
/// Infinite bounds are allowed. Supports dimensions one and two.
pub fn rectangle_probability(mean: &[f64], cov: &DMatrix<f64>, lower: &[f64], upper: &[f64]) -> Result<f64> {
    match mean.len() {
        1 => {
            let s = cov[(0, 0)].sqrt();
            if s <= 0.0 || !s.is_finite() {
                return Err(Error::SingularCovariance);
            }
            Ok(normal_cdf((upper[0] - mean[0]) / s) - normal_cdf((lower[0] - mean[0]) / s))
        }
        2 => {
            let (s11, s12, s22) = (cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]);
            let cond_var = s22 - s12 * s12 / s11;
            if s11 <= 0.0 || cond_var <= 0.0 {
                return Err(Error::SingularCovariance);
            }
            let (sd1, cond_sd) = (s11.sqrt(), cond_var.sqrt());
            // integrate over the standardised first coordinate
            let za = ((lower[0] - mean[0]) / sd1).max(-12.0);
            let zb = ((upper[0] - mean[0]) / sd1).min(12.0);
            let inner = |z: f64| {
                let cond_mean = mean[1] + s12 / sd1 * z;
                let p = normal_cdf((upper[1] - cond_mean) / cond_sd) - normal_cdf((lower[1] - cond_mean) / cond_sd);
                normal_pdf(z) * p
            };
            Ok(gauss_legendre(inner, za, zb, 0.0625).clamp(0.0, 1.0))
        }
        d => Err(Error::InvalidParameter(format!(
            "rectangle probabilities are implemented for dimensions 1 and 2, not {d}"
        ))),
    }
}

/// Pairwise (cascade) summation; the result depends only on the order of
/// `values`, never on how the caller computed them.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 16 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}
