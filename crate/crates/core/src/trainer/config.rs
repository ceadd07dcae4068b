use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, MlpSpec};
use crate::discrepancy::KsdForm;
use crate::error::{Error, Result};
use crate::models::{EnergyModel, Generator, NoiseKind, SteinCriticNet, WassersteinCritic, N_EXPERTS};

/// Which discrepancy plays each role: the generator-vs-data term (Wasserstein
/// or JS) and the two Stein terms (a neural critic or the kernel form).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[serde(alias = "W+SteinNet")]
    WSteinNet,
    #[serde(alias = "W+KSD")]
    WKsd,
    #[serde(alias = "JS+SteinNet")]
    JsSteinNet,
    #[serde(alias = "JS+KSD")]
    JsKsd,
}

impl Variant {
    pub fn is_wasserstein(self) -> bool {
        matches!(self, Variant::WSteinNet | Variant::WKsd)
    }

    pub fn uses_kernel(self) -> bool {
        matches!(self, Variant::WKsd | Variant::JsKsd)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::WSteinNet => "W+SteinNet",
            Variant::WKsd => "W+KSD",
            Variant::JsSteinNet => "JS+SteinNet",
            Variant::JsKsd => "JS+KSD",
        }
    }
}

/// Bridge weight: zero during warm-up, then a linear ramp from `start` to `end`.
///
/// Unset lengths default to 20% of the run each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lambda2Schedule {
    pub start: f64,
    pub end: f64,
    #[serde(default)]
    pub warmup_iters: Option<u64>,
    #[serde(default)]
    pub ramp_iters: Option<u64>,
}

impl Default for Lambda2Schedule {
    fn default() -> Self {
        Lambda2Schedule {
            start: 0.0,
            end: 1.0,
            warmup_iters: None,
            ramp_iters: None,
        }
    }
}

impl Lambda2Schedule {
    pub fn constant(value: f64) -> Self {
        Lambda2Schedule {
            start: value,
            end: value,
            warmup_iters: Some(0),
            ramp_iters: Some(0),
        }
    }

    /// Warm-up and ramp lengths for a run of `total` iterations.
    pub fn resolve(&self, total: u64) -> (u64, u64) {
        let fifth = total / 5;
        (self.warmup_iters.unwrap_or(fifth), self.ramp_iters.unwrap_or(fifth))
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.start.min(self.end).min(0.0), self.start.max(self.end).max(0.0))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("start", self.start), ("end", self.end)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("lambda2 {name} must be ≥ 0, got {v}")));
            }
        }
        Ok(())
    }
}

pub fn lambda2_at(schedule: &Lambda2Schedule, iteration: u64, total: u64) -> f64 {
    let (warmup, ramp) = schedule.resolve(total);
    if iteration < warmup {
        return 0.0;
    }
    let t = iteration - warmup;
    if t >= ramp {
        return schedule.end;
    }
    schedule.start + (t as f64 / ramp as f64) * (schedule.end - schedule.start)
}

/// Network shapes for the four models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub generator: MlpSpec,
    pub noise: NoiseKind,
    pub energy_feature: MlpSpec,
    pub n_experts: usize,
    pub critic: MlpSpec,
    pub stein_critic: MlpSpec,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            generator: Generator::default_spec(),
            noise: NoiseKind::StandardNormal,
            energy_feature: EnergyModel::default_spec(),
            n_experts: N_EXPERTS,
            critic: WassersteinCritic::default_spec(),
            stein_critic: SteinCriticNet::default_spec(),
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        let d = self.generator.output_width();
        for (name, w) in [
            ("energy feature input", self.energy_feature.input_width()),
            ("critic input", self.critic.input_width()),
            ("stein critic input", self.stein_critic.input_width()),
            ("stein critic output", self.stein_critic.output_width()),
        ] {
            if w != d {
                return Err(Error::InvalidArgument(format!("{name} width {w} != data dimension {d}")));
            }
        }
        if self.critic.output_width() != 1 {
            return Err(Error::InvalidArgument("critic must have a scalar output".into()));
        }
        if self.n_experts == 0 {
            return Err(Error::InvalidArgument("energy model needs at least one expert".into()));
        }
        if !self.energy_feature.is_twice_differentiable() || !self.stein_critic.is_twice_differentiable() {
            return Err(Error::InvalidArgument(
                "energy features and Stein critic are differentiated twice and need smooth activations".into(),
            ));
        }
        Ok(())
    }
}

fn default_lambda1() -> f64 {
    1.0
}
fn default_inner() -> usize {
    5
}
fn default_batch() -> usize {
    100
}
fn default_explicit() -> AdamConfig {
    AdamConfig::EXPLICIT
}
fn default_implicit() -> AdamConfig {
    AdamConfig::IMPLICIT
}
fn default_gp() -> f64 {
    10.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    #[serde(default = "default_lambda1")]
    pub lambda1: f64,
    #[serde(default)]
    pub lambda2: Lambda2Schedule,
    #[serde(default = "default_inner")]
    pub n_d: usize,
    #[serde(default = "default_inner")]
    pub n_c: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Energy model and Stein critic.
    #[serde(default = "default_explicit")]
    pub adam_explicit: AdamConfig,
    /// Generator and critic.
    #[serde(default = "default_implicit")]
    pub adam_implicit: AdamConfig,
    pub iterations: u64,
    /// Snapshot cadence; 0 keeps only the initial and final snapshots.
    #[serde(default)]
    pub eval_every: u64,
    #[serde(default)]
    pub checkpoint_every: u64,
    pub seed: u64,
    #[serde(default = "default_gp")]
    pub gp_weight: f64,
    #[serde(default)]
    pub ksd_form: KsdForm,
    /// Weight of `mean ‖f(x)‖²` subtracted from the Stein-critic objective; 0 is the plain objective.
    #[serde(default)]
    pub stein_critic_l2: f64,
    /// When false the log's wall-clock column is left empty, making logs byte-reproducible.
    #[serde(default = "default_true")]
    pub log_wall_clock: bool,
    #[serde(default)]
    pub arch: Architecture,
}

impl TrainConfig {
    pub fn new(variant: Variant, iterations: u64, seed: u64) -> Self {
        TrainConfig {
            variant,
            lambda1: 1.0,
            lambda2: Lambda2Schedule::default(),
            n_d: 5,
            n_c: 5,
            batch_size: 100,
            adam_explicit: AdamConfig::EXPLICIT,
            adam_implicit: AdamConfig::IMPLICIT,
            iterations,
            eval_every: 0,
            checkpoint_every: 0,
            seed,
            gp_weight: 10.0,
            ksd_form: KsdForm::U,
            stein_critic_l2: 0.0,
            log_wall_clock: true,
            arch: Architecture::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda1 must be ≥ 0, got {}", self.lambda1)));
        }
        self.lambda2.validate()?;
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument(format!("batch size must be ≥ 2, got {}", self.batch_size)));
        }
        if !(self.gp_weight >= 0.0 && self.gp_weight.is_finite()) {
            return Err(Error::InvalidArgument(format!("gp weight must be ≥ 0, got {}", self.gp_weight)));
        }
        if !(self.stein_critic_l2 >= 0.0 && self.stein_critic_l2.is_finite()) {
            return Err(Error::InvalidArgument("stein_critic_l2 must be ≥ 0".into()));
        }
        self.adam_explicit.validate()?;
        self.adam_implicit.validate()?;
        self.arch.validate()
    }

    pub fn lambda2_at(&self, iteration: u64) -> f64 {
        lambda2_at(&self.lambda2, iteration, self.iterations)
    }

    /// True when some iteration of the run has a nonzero bridge weight.
    pub fn bridge_ever_on(&self) -> bool {
        let (lo, hi) = self.lambda2.bounds();
        lo != 0.0 || hi != 0.0
    }
}
