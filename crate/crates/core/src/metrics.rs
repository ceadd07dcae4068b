//! Sample-quality and density-accuracy metrics: MMD, high-quality sample
//! rate, grid KL/JS divergences and density-ranking AUC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::EnergyModel;
use crate::numkit::matrix::sq_dist;
use crate::numkit::{Matrix, RbfKernel, RngStream};
use crate::synthdata::GaussianMixture;

const PROB_FLOOR: f64 = 1e-12;

/// Anything that assigns an unnormalized log-density to points.
pub trait LogDensity {
    fn log_density_unnormalized(&self, x: &Matrix) -> Result<Vec<f64>>;
}

impl LogDensity for EnergyModel {
    fn log_density_unnormalized(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.energy(x)?.into_iter().map(|e| -e).collect())
    }
}

impl LogDensity for GaussianMixture {
    fn log_density_unnormalized(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.log_density(x)
    }
}

fn mean_kernel(x: &Matrix, y: &Matrix, k: &RbfKernel) -> f64 {
    let mut total = 0.0;
    for xi in x.row_iter() {
        for yj in y.row_iter() {
            total += k.from_sq_dist(sq_dist(xi, yj));
        }
    }
    total / (x.rows() * y.rows()) as f64
}

/// Distance between kernel mean embeddings, biased form with diagonals.
pub fn mmd(x: &Matrix, y: &Matrix, k: &RbfKernel) -> Result<f64> {
    if x.rows() == 0 || y.rows() == 0 {
        return Err(Error::InvalidArgument("MMD needs non-empty samples".into()));
    }
    if x.cols() != y.cols() {
        return Err(Error::DimensionMismatch {
            context: "mmd",
            expected: x.cols(),
            found: y.cols(),
        });
    }
    let v = mean_kernel(x, x, k) - 2.0 * mean_kernel(x, y, k) + mean_kernel(y, y, k);
    Ok(v.max(0.0).sqrt())
}

/// How the "σ" in a distance threshold is read from a variance value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaReading {
    /// σ is the printed variance value itself.
    #[default]
    Variance,
    /// σ is the standard deviation, √variance.
    StdDev,
}

impl SigmaReading {
    pub fn sigma(self, variance: f64) -> f64 {
        match self {
            SigmaReading::Variance => variance,
            SigmaReading::StdDev => variance.sqrt(),
        }
    }
}

/// Fraction of rows within `threshold` of their nearest component mean.
pub fn hsr(x: &Matrix, m: &GaussianMixture, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!("HSR threshold must be positive, got {threshold}")));
    }
    if x.cols() != m.dim() {
        return Err(Error::DimensionMismatch {
            context: "hsr",
            expected: m.dim(),
            found: x.cols(),
        });
    }
    if x.rows() == 0 {
        return Ok(0.0);
    }
    let t2 = threshold * threshold;
    let good = x
        .row_iter()
        .filter(|xi| m.means().row_iter().any(|mu| sq_dist(xi, mu) < t2))
        .count();
    Ok(good as f64 / x.rows() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub resolution: usize,
}

impl GridSpec {
    pub fn new(x_range: (f64, f64), y_range: (f64, f64), resolution: usize) -> Result<Self> {
        let ok = x_range.0 < x_range.1 && y_range.0 < y_range.1 && resolution >= 2;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "invalid grid {x_range:?} × {y_range:?} at resolution {resolution}"
            )));
        }
        Ok(GridSpec {
            x_range,
            y_range,
            resolution,
        })
    }

    pub fn square(half_width: f64, resolution: usize) -> Result<Self> {
        Self::new((-half_width, half_width), (-half_width, half_width), resolution)
    }

    pub fn two_circle() -> Self {
        Self::square(11.0, 300).expect("valid")
    }

    pub fn two_spiral() -> Self {
        Self::square(8.0, 300).expect("valid")
    }

    /// Grid nodes with both endpoints included, x-major.
    pub fn points(&self) -> Matrix {
        let n = self.resolution;
        let axis = |(lo, hi): (f64, f64), i: usize| lo + (hi - lo) * i as f64 / (n - 1) as f64;
        let mut data = Vec::with_capacity(2 * n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(axis(self.x_range, i));
                data.push(axis(self.y_range, j));
            }
        }
        Matrix::from_vec(n * n, 2, data).expect("sized")
    }
}

fn normalize_log(log_w: &[f64], what: &str) -> Result<Vec<f64>> {
    let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::NonFinite(format!("{what} log-density on the grid")));
    }
    let z: f64 = log_w.iter().map(|l| (l - m).exp()).sum();
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::NonFinite(format!("{what} grid mass")));
    }
    Ok(log_w.iter().map(|l| (l - m).exp() / z).collect())
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.max(PROB_FLOOR) / qi.max(PROB_FLOOR)).ln())
        .sum()
}

/// `(KL(p‖q), JS(p, q))` between grid-normalized log-weights.
pub fn divergences_from_log_weights(true_log: &[f64], est_log: &[f64]) -> Result<(f64, f64)> {
    if true_log.len() != est_log.len() {
        return Err(Error::DimensionMismatch {
            context: "grid divergences",
            expected: true_log.len(),
            found: est_log.len(),
        });
    }
    let p = normalize_log(true_log, "true")?;
    let q = normalize_log(est_log, "estimated")?;
    let mid: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
    let kld = kl(&p, &q);
    let jsd = 0.5 * kl(&p, &mid) + 0.5 * kl(&q, &mid);
    Ok((kld, jsd))
}

/// KL and JS divergences between the true and estimated densities, each
/// normalized over the grid nodes.
pub fn grid_divergences(truth: &GaussianMixture, model: &dyn LogDensity, grid: &GridSpec) -> Result<(f64, f64)> {
    let pts = grid.points();
    let true_log = truth.log_density(&pts)?;
    let est_log = model.log_density_unnormalized(&pts)?;
    divergences_from_log_weights(&true_log, &est_log)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AucSpec {
    pub negatives_per_center: usize,
    pub radius: f64,
}

impl AucSpec {
    pub fn new(negatives_per_center: usize, radius: f64) -> Result<Self> {
        if negatives_per_center == 0 || !(radius > 0.0) {
            return Err(Error::InvalidArgument("AUC needs negatives and a positive radius".into()));
        }
        Ok(AucSpec {
            negatives_per_center,
            radius,
        })
    }

    /// 10 negatives per center within `3√σ²`.
    pub fn for_mixture(m: &GaussianMixture) -> Self {
        AucSpec {
            negatives_per_center: 10,
            radius: 3.0 * m.variance().sqrt(),
        }
    }
}

/// Mann-Whitney AUC with ties counted one half.
pub fn auc_from_scores(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::InvalidArgument("AUC needs positives and negatives".into()));
    }
    if positives.iter().chain(negatives).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("AUC scores".into()));
    }
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&v| (v, true))
        .chain(negatives.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // average ranks over tie groups
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (positives.len() as f64, negatives.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Negatives drawn uniformly in the disk of `spec.radius` around each mean.
pub fn auc_negatives(m: &GaussianMixture, spec: &AucSpec, rng: &mut RngStream) -> Result<Matrix> {
    if m.dim() != 2 {
        return Err(Error::DimensionMismatch {
            context: "density_auc samples disks in the plane",
            expected: 2,
            found: m.dim(),
        });
    }
    let mut rows = Vec::with_capacity(m.n_components() * spec.negatives_per_center);
    for mu in m.means().row_iter() {
        for _ in 0..spec.negatives_per_center {
            let r = spec.radius * rng.uniform().sqrt();
            let t = 2.0 * std::f64::consts::PI * rng.uniform();
            rows.push(vec![mu[0] + r * t.cos(), mu[1] + r * t.sin()]);
        }
    }
    Matrix::from_rows(&rows)
}

/// Ranks component means (positives) against nearby points (negatives) by model density.
pub fn density_auc(model: &dyn LogDensity, m: &GaussianMixture, spec: &AucSpec, rng: &mut RngStream) -> Result<f64> {
    let negatives = auc_negatives(m, spec, rng)?;
    let pos = model.log_density_unnormalized(m.means())?;
    let neg = model.log_density_unnormalized(&negatives)?;
    auc_from_scores(&pos, &neg)
}

/// One evaluation row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mmd: f64,
    pub hsr: f64,
    pub kld: f64,
    pub jsd: f64,
    pub auc: f64,
}
