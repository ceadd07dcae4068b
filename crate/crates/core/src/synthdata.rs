//! Isotropic Gaussian mixtures for the Two-Circle and Two-Spiral benchmarks,
//! plus the noise-injection and subsampling ablations.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Matrix, RngStream, SampleBatch};

pub const TWO_CIRCLE_VARIANCE: f64 = 0.2;
pub const TWO_SPIRAL_VARIANCE: f64 = 0.5;
/// Covariance scale of injected noise, `N(0, 2·I)`.
pub const NOISE_COVARIANCE: f64 = 2.0;
pub const NOISE_GRID: [usize; 8] = [40, 100, 160, 300, 400, 600, 800, 1000];
pub const SUBSAMPLE_GRID: [usize; 7] = [100, 200, 300, 500, 700, 1000, 2000];

/// Equal-weight mixture of `N(μₖ, σ² I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    means: Matrix,
    variance: f64,
}

impl GaussianMixture {
    pub fn new(means: Matrix, variance: f64) -> Result<Self> {
        if means.rows() == 0 || means.cols() == 0 {
            return Err(Error::InvalidArgument("a mixture needs at least one component".into()));
        }
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::InvalidArgument(format!("variance must be positive, got {variance}")));
        }
        if !means.all_finite() {
            return Err(Error::NonFinite("mixture means".into()));
        }
        Ok(GaussianMixture { means, variance })
    }

    pub fn means(&self) -> &Matrix {
        &self.means
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn n_components(&self) -> usize {
        self.means.rows()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    /// Component index uniformly, then an isotropic Gaussian draw around its mean.
    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Result<SampleBatch> {
        if n == 0 {
            return Err(Error::InvalidArgument("cannot sample an empty batch".into()));
        }
        let std = self.variance.sqrt();
        let d = self.dim();
        let mut out = Matrix::zeros(n, d);
        for i in 0..n {
            let k = rng.index(self.n_components());
            let mean = self.means.row(k);
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = mean[j] + std * rng.normal();
            }
        }
        Ok(out)
    }

    /// Log-density per row, by log-sum-exp over components.
    pub fn log_density(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "GaussianMixture::log_density",
                expected: self.dim(),
                found: x.cols(),
            });
        }
        let d = self.dim() as f64;
        let k = self.n_components() as f64;
        let log_norm = -0.5 * d * (2.0 * PI * self.variance).ln() - k.ln();
        let mut terms = vec![0.0; self.n_components()];
        Ok(x.row_iter()
            .map(|xi| {
                for (t, mean) in terms.iter_mut().zip(self.means.row_iter()) {
                    *t = -crate::numkit::matrix::sq_dist(xi, mean) / (2.0 * self.variance);
                }
                let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = terms.iter().map(|t| (t - m).exp()).sum();
                log_norm + m + s.ln()
            })
            .collect())
    }

    /// Normalized density `(1/K) Σₖ N(x; μₖ, σ² I)` per row.
    pub fn density(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.log_density(x)?.into_iter().map(f64::exp).collect())
    }
}

/// 8 means on radius 4 and 16 on radius 8, variance 0.2.
pub fn two_circle_mixture() -> GaussianMixture {
    let mut rows = Vec::with_capacity(24);
    for (radius, count) in [(4.0, 8), (8.0, 16)] {
        for k in 1..=count {
            let t = 2.0 * PI * k as f64 / count as f64;
            rows.push(vec![radius * t.cos(), radius * t.sin()]);
        }
    }
    GaussianMixture::new(Matrix::from_rows(&rows).expect("rectangular"), TWO_CIRCLE_VARIANCE).expect("valid")
}

/// Spiral parameters `c = 2π/3 + linspace(0, 0.5, 50)·2π`.
pub fn spiral_grid() -> Vec<f64> {
    (0..50)
        .map(|i| 2.0 * PI / 3.0 + (0.5 * i as f64 / 49.0) * 2.0 * PI)
        .collect()
}

/// Two centrally symmetric spirals of 50 means each, variance 0.5.
pub fn two_spiral_mixture() -> GaussianMixture {
    let c = spiral_grid();
    let mut rows = Vec::with_capacity(100);
    for &ci in &c {
        rows.push(vec![-ci * ci.cos(), ci * ci.sin()]);
    }
    for &ci in &c {
        rows.push(vec![ci * ci.cos(), -ci * ci.sin()]);
    }
    GaussianMixture::new(Matrix::from_rows(&rows).expect("rectangular"), TWO_SPIRAL_VARIANCE).expect("valid")
}

/// Appends `n_noise` draws from `N(0, covariance·I)` and shuffles the rows.
pub fn add_noise(x: &Matrix, n_noise: usize, covariance: f64, rng: &mut RngStream) -> Result<SampleBatch> {
    if !(covariance >= 0.0 && covariance.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise covariance must be ≥ 0, got {covariance}")));
    }
    let noise = rng.normal_matrix(n_noise, x.cols()).scale(covariance.sqrt());
    let all = x.vstack(&noise)?;
    let mut order: Vec<usize> = (0..all.rows()).collect();
    rng.shuffle(&mut order);
    Ok(all.select_rows(&order))
}

/// `n` distinct rows chosen uniformly without replacement, in random order.
pub fn subsample(x: &Matrix, n: usize, rng: &mut RngStream) -> Result<SampleBatch> {
    if n > x.rows() {
        return Err(Error::InvalidArgument(format!(
            "cannot subsample {n} rows from {}",
            x.rows()
        )));
    }
    let mut order: Vec<usize> = (0..x.rows()).collect();
    rng.shuffle(&mut order);
    order.truncate(n);
    Ok(x.select_rows(&order))
}
