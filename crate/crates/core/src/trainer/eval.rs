//! Metric evaluation of a generator and an energy model against a known mixture.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    density_auc, grid_divergences, hsr, mmd, AucSpec, GridSpec, LogDensity, MetricReport, SigmaReading,
};
use crate::models::{EnergyModel, Generator};
use crate::numkit::{Matrix, RbfKernel, RngStream};
use crate::synthdata::GaussianMixture;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    /// Generated points used for MMD and HSR.
    pub n_generated: usize,
    /// HSR threshold is `hsr_multiplier · σ`, σ read from the mixture variance by `hsr_sigma`.
    pub hsr_multiplier: f64,
    #[serde(default)]
    pub hsr_sigma: SigmaReading,
    pub grid: GridSpec,
    pub auc: AucSpec,
}

impl EvalSpec {
    /// 2000 points, threshold σ, grid `[−11, 11]²`.
    pub fn two_circle(m: &GaussianMixture) -> Self {
        EvalSpec {
            n_generated: 2000,
            hsr_multiplier: 1.0,
            hsr_sigma: SigmaReading::Variance,
            grid: GridSpec::two_circle(),
            auc: AucSpec::for_mixture(m),
        }
    }

    /// 5000 points, threshold 5σ, grid `[−8, 8]²`.
    pub fn two_spiral(m: &GaussianMixture) -> Self {
        EvalSpec {
            n_generated: 5000,
            hsr_multiplier: 5.0,
            hsr_sigma: SigmaReading::Variance,
            grid: GridSpec::two_spiral(),
            auc: AucSpec::for_mixture(m),
        }
    }

    pub fn hsr_threshold(&self, m: &GaussianMixture) -> f64 {
        self.hsr_multiplier * self.hsr_sigma.sigma(m.variance())
    }
}

/// Evaluates snapshots against a fixed held-out set. The MMD bandwidth comes
/// from the held-out set once, so values are comparable across a run.
pub struct Evaluator {
    truth: GaussianMixture,
    heldout: Matrix,
    kernel: RbfKernel,
    spec: EvalSpec,
    seed: u64,
}

impl Evaluator {
    pub fn new(truth: GaussianMixture, heldout: Matrix, spec: EvalSpec, seed: u64) -> Result<Self> {
        if heldout.cols() != truth.dim() {
            return Err(Error::DimensionMismatch {
                context: "held-out set",
                expected: truth.dim(),
                found: heldout.cols(),
            });
        }
        if spec.n_generated == 0 {
            return Err(Error::InvalidArgument("evaluation needs generated points".into()));
        }
        let kernel = RbfKernel::median_heuristic(&heldout)?;
        Ok(Evaluator {
            truth,
            heldout,
            kernel,
            spec,
            seed,
        })
    }

    pub fn spec(&self) -> &EvalSpec {
        &self.spec
    }

    pub fn heldout(&self) -> &Matrix {
        &self.heldout
    }

    pub fn kernel(&self) -> &RbfKernel {
        &self.kernel
    }

    pub fn truth(&self) -> &GaussianMixture {
        &self.truth
    }

    /// Generated points for evaluation at `iteration`; a fixed function of seed and iteration.
    pub fn samples(&self, generator: &Generator, iteration: u64) -> Result<Matrix> {
        let mut rng = RngStream::derive_from(self.seed, &format!("eval/{iteration}/samples"));
        generator.generate(self.spec.n_generated, &mut rng)
    }

    pub fn sample_metrics(&self, generator: &Generator, iteration: u64) -> Result<(f64, f64)> {
        self.metrics_of_samples(&self.samples(generator, iteration)?)
    }

    /// MMD to the held-out set and HSR of arbitrary points.
    pub fn metrics_of_samples(&self, x: &Matrix) -> Result<(f64, f64)> {
        Ok((
            mmd(x, &self.heldout, &self.kernel)?,
            hsr(x, &self.truth, self.spec.hsr_threshold(&self.truth))?,
        ))
    }

    /// Grid KLD, grid JSD and AUC of any unnormalized log-density.
    pub fn density_metrics(&self, model: &dyn LogDensity, iteration: u64) -> Result<(f64, f64, f64)> {
        let (kld, jsd) = grid_divergences(&self.truth, model, &self.spec.grid)?;
        let mut rng = RngStream::derive_from(self.seed, &format!("eval/{iteration}/auc"));
        let auc = density_auc(model, &self.truth, &self.spec.auc, &mut rng)?;
        Ok((kld, jsd, auc))
    }

    pub fn evaluate(&self, generator: &Generator, energy: &EnergyModel, iteration: u64) -> Result<MetricReport> {
        let (mmd, hsr) = self.sample_metrics(generator, iteration)?;
        let (kld, jsd, auc) = self.density_metrics(energy, iteration)?;
        Ok(MetricReport {
            mmd,
            hsr,
            kld,
            jsd,
            auc,
        })
    }
}
