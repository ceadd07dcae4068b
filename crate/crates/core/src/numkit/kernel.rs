//! Gaussian RBF kernel `k(x, y) = exp(-‖x - y‖² / (2h²))` and its derivatives.

use serde::{Deserialize, Serialize};

use super::matrix::sq_dist;
use super::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbfKernel {
    bandwidth: f64,
}

impl RbfKernel {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "RBF bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(RbfKernel { bandwidth })
    }

    /// Kernel with the median-heuristic bandwidth of `x`.
    pub fn median_heuristic(x: &Matrix) -> Result<Self> {
        Self::new(median_heuristic(x)?)
    }

    #[inline]
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    #[inline]
    pub fn h2(&self) -> f64 {
        self.bandwidth * self.bandwidth
    }

    /// Kernel value from a precomputed squared distance.
    #[inline]
    pub fn from_sq_dist(&self, d2: f64) -> f64 {
        (-d2 / (2.0 * self.h2())).exp()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dims(x, y)?;
        Ok(self.from_sq_dist(sq_dist(x, y)))
    }

    /// ∇ₓ k(x, y) = −((x − y)/h²) k(x, y).
    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let k = self.eval(x, y)?;
        let h2 = self.h2();
        Ok(x.iter().zip(y).map(|(a, b)| -(a - b) / h2 * k).collect())
    }

    /// ∇_y k(x, y) = +((x − y)/h²) k(x, y).
    pub fn grad_y(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let k = self.eval(x, y)?;
        let h2 = self.h2();
        Ok(x.iter().zip(y).map(|(a, b)| (a - b) / h2 * k).collect())
    }

    /// tr ∇ₓ∇_y k(x, y) = (d/h² − ‖x − y‖²/h⁴) k(x, y).
    pub fn cross_trace(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dims(x, y)?;
        let d2 = sq_dist(x, y);
        let h2 = self.h2();
        let d = x.len() as f64;
        Ok((d / h2 - d2 / (h2 * h2)) * self.from_sq_dist(d2))
    }

    /// Gram matrix `K[i, j] = k(xᵢ, yⱼ)`.
    pub fn gram(&self, x: &Matrix, y: &Matrix) -> Result<Matrix> {
        if x.cols() != y.cols() {
            return Err(Error::DimensionMismatch {
                context: "RbfKernel::gram",
                expected: x.cols(),
                found: y.cols(),
            });
        }
        let mut out = Matrix::zeros(x.rows(), y.rows());
        for (i, xi) in x.row_iter().enumerate() {
            let row = out.row_mut(i);
            for (j, yj) in y.row_iter().enumerate() {
                row[j] = self.from_sq_dist(sq_dist(xi, yj));
            }
        }
        Ok(out)
    }
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "rbf kernel",
            expected: x.len(),
            found: y.len(),
        });
    }
    Ok(())
}

/// Median pairwise Euclidean distance over distinct pairs, divided by √2.
///
/// For an even number of pairs the median is the mean of the two middle values.
pub fn median_heuristic(x: &Matrix) -> Result<f64> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "median heuristic needs at least 2 rows, got {n}"
        )));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(sq_dist(x.row(i), x.row(j)).sqrt());
        }
    }
    let m = dists.len();
    let mid = m / 2;
    let (_, upper, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    let median = if m % 2 == 1 {
        upper
    } else {
        let lower = dists[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    Ok(median / std::f64::consts::SQRT_2)
}
