//! Alternating training of the generator, critic, energy model and Stein
//! critic.
//!
//! One outer iteration runs, in order: `n_d` critic ascent steps, `n_c`
//! Stein-critic ascent steps (neural variants only), one energy-model descent
//! step and one generator descent step. Every random draw comes from a named
//! stream derived from the run seed, so a run is reproducible and a component
//! that is switched off consumes no randomness from the others.

pub mod baselines;
pub mod config;
pub mod eval;
pub mod state;

use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_params, AdamState, Graph, ParamStore, Smoothness, Var};
use crate::discrepancy::{
    divergence_graph, divergence_of_critic, interpolate, js_disc_objective_graph, js_gen_loss_graph, ksd_graph,
    stein_operator_graph, wasserstein_objective_graph, GpConfig,
};
use crate::error::{Error, Result};
use crate::models::{CriticMode, EnergyModel, Generator, SteinCriticNet, WassersteinCritic};
use crate::numkit::{Matrix, RbfKernel, RngStream};

pub use baselines::{GanBaseline, KsdDemBaseline};
pub use config::{lambda2_at, Architecture, Lambda2Schedule, TrainConfig, Variant};
pub use eval::{EvalSpec, Evaluator};
pub use state::{StreamPosition, TrainCheckpoint};

/// `B` rows drawn uniformly with replacement.
pub fn draw_batch(data: &Matrix, b: usize, rng: &mut RngStream) -> Matrix {
    let idx: Vec<usize> = (0..b).map(|_| rng.index(data.rows())).collect();
    data.select_rows(&idx)
}

pub(crate) fn critic_mode(variant: Variant) -> CriticMode {
    if variant.is_wasserstein() {
        CriticMode::Wasserstein
    } else {
        CriticMode::Js
    }
}

/// Per-iteration loss components. Skipped updates report 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Losses {
    /// Critic objective (maximized), averaged over the inner steps.
    pub l_dis: f64,
    /// Stein-critic objective (maximized), averaged over the inner steps.
    pub l_critic: f64,
    pub l_est: f64,
    pub l_gen: f64,
}

impl Losses {
    pub fn all_finite(&self) -> bool {
        [self.l_dis, self.l_critic, self.l_est, self.l_gen].iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// Iterations completed, counting this one.
    pub iteration: u64,
    pub lambda2: f64,
    pub losses: Losses,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSnapshot {
    pub iteration: u64,
    pub lambda2: f64,
    pub losses: Losses,
    pub generator: ParamStore,
    pub energy: ParamStore,
    pub critic: ParamStore,
    pub stein_critic: Option<ParamStore>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub generator: Generator,
    pub energy: EnergyModel,
    pub critic: WassersteinCritic,
    /// Present only in the neural Stein variants; one network serves both Stein terms.
    pub stein_critic: Option<SteinCriticNet>,
}

impl Models {
    pub fn init(config: &TrainConfig) -> Result<Self> {
        let seed = config.seed;
        let arch = &config.arch;
        let generator = Generator::init(
            arch.generator.clone(),
            arch.noise,
            &mut RngStream::derive_from(seed, "init/generator"),
        );
        let energy = EnergyModel::init(
            arch.energy_feature.clone(),
            arch.n_experts,
            &mut RngStream::derive_from(seed, "init/energy"),
        )?;
        let critic = WassersteinCritic::init(
            arch.critic.clone(),
            critic_mode(config.variant),
            &mut RngStream::derive_from(seed, "init/critic"),
        )?;
        let stein_critic = if config.variant.uses_kernel() {
            None
        } else {
            Some(SteinCriticNet::init(
                arch.stein_critic.clone(),
                &mut RngStream::derive_from(seed, "init/stein_critic"),
            )?)
        };
        Ok(Models {
            generator,
            energy,
            critic,
            stein_critic,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizers {
    pub generator: AdamState,
    pub energy: AdamState,
    pub critic: AdamState,
    pub stein_critic: Option<AdamState>,
}

impl Optimizers {
    pub fn new(config: &TrainConfig, models: &Models) -> Self {
        Optimizers {
            generator: AdamState::new(config.adam_implicit, models.generator.params.len()),
            energy: AdamState::new(config.adam_explicit, models.energy.params.len()),
            critic: AdamState::new(config.adam_implicit, models.critic.params.len()),
            stein_critic: models
                .stein_critic
                .as_ref()
                .map(|f| AdamState::new(config.adam_explicit, f.params.len())),
        }
    }
}

pub const STREAM_LABELS: [&str; 7] = [
    "critic/data",
    "critic/noise",
    "critic/gp",
    "stein/data",
    "stein/noise",
    "estimator/data",
    "generator/noise",
];

#[derive(Debug, Clone)]
pub struct Streams {
    pub critic_data: RngStream,
    pub critic_noise: RngStream,
    pub critic_gp: RngStream,
    pub stein_data: RngStream,
    pub stein_noise: RngStream,
    pub estimator_data: RngStream,
    /// One draw per iteration, shared by the estimator and generator updates.
    pub generator_noise: RngStream,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let s = |label| RngStream::derive_from(seed, label);
        Streams {
            critic_data: s("critic/data"),
            critic_noise: s("critic/noise"),
            critic_gp: s("critic/gp"),
            stein_data: s("stein/data"),
            stein_noise: s("stein/noise"),
            estimator_data: s("estimator/data"),
            generator_noise: s("generator/noise"),
        }
    }

    fn all(&self) -> [&RngStream; 7] {
        [
            &self.critic_data,
            &self.critic_noise,
            &self.critic_gp,
            &self.stein_data,
            &self.stein_noise,
            &self.estimator_data,
            &self.generator_noise,
        ]
    }

    pub fn positions(&self) -> Vec<StreamPosition> {
        self.all()
            .iter()
            .map(|s| StreamPosition {
                label: s.label().to_string(),
                position: s.position(),
            })
            .collect()
    }

    pub fn restore(seed: u64, positions: &[StreamPosition]) -> Result<Self> {
        let find = |label: &str| -> Result<RngStream> {
            let p = positions
                .iter()
                .find(|p| p.label == label)
                .ok_or_else(|| Error::Checkpoint(format!("missing stream {label:?}")))?;
            Ok(RngStream::restore(seed, label, p.position))
        };
        Ok(Streams {
            critic_data: find("critic/data")?,
            critic_noise: find("critic/noise")?,
            critic_gp: find("critic/gp")?,
            stein_data: find("stein/data")?,
            stein_noise: find("stein/noise")?,
            estimator_data: find("estimator/data")?,
            generator_noise: find("generator/noise")?,
        })
    }
}

fn add_term(g: &mut Graph, total: Option<Var>, term: Var) -> Result<Option<Var>> {
    Ok(Some(match total {
        None => term,
        Some(t) => g.add(t, term)?,
    }))
}

/// Mean Stein operator of `f` under the model's score at `x`, with `f` and its
/// divergence built in the graph from the critic's parameter variables.
fn stein_term_graph(
    g: &mut Graph,
    f: &SteinCriticNet,
    f_vars: &[Var],
    score: Var,
    x: Var,
) -> Result<Var> {
    let fx = f.forward_graph(g, f_vars, x)?;
    let div = divergence_graph(g, fx, x)?;
    let op = stein_operator_graph(g, score, fx, div)?;
    Ok(g.mean(op))
}

pub struct Trainer {
    config: TrainConfig,
    data: Matrix,
    pub models: Models,
    pub optim: Optimizers,
    pub streams: Streams,
    iteration: u64,
    losses: Losses,
}

impl Trainer {
    pub fn new(config: TrainConfig, data: Matrix) -> Result<Self> {
        config.validate()?;
        Self::check_data(&config, &data)?;
        let models = Models::init(&config)?;
        let optim = Optimizers::new(&config, &models);
        let streams = Streams::new(config.seed);
        Ok(Trainer {
            config,
            data,
            models,
            optim,
            streams,
            iteration: 0,
            losses: Losses::default(),
        })
    }

    fn check_data(config: &TrainConfig, data: &Matrix) -> Result<()> {
        if data.rows() < config.batch_size {
            return Err(Error::InvalidArgument(format!(
                "training set has {} rows, fewer than the batch size {}",
                data.rows(),
                config.batch_size
            )));
        }
        let d = config.arch.generator.output_width();
        if data.cols() != d {
            return Err(Error::DimensionMismatch {
                context: "training data",
                expected: d,
                found: data.cols(),
            });
        }
        if !data.all_finite() {
            return Err(Error::NonFinite("training data".into()));
        }
        Ok(())
    }

    pub(crate) fn from_parts(
        config: TrainConfig,
        data: Matrix,
        models: Models,
        optim: Optimizers,
        streams: Streams,
        iteration: u64,
        losses: Losses,
    ) -> Result<Self> {
        config.validate()?;
        Self::check_data(&config, &data)?;
        Ok(Trainer {
            config,
            data,
            models,
            optim,
            streams,
            iteration,
            losses,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    /// Outer iterations completed so far.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn losses(&self) -> Losses {
        self.losses
    }

    /// Bridge weight used by the most recent step (or the next one, before any step).
    pub fn current_lambda2(&self) -> f64 {
        self.config.lambda2_at(self.iteration.saturating_sub(1))
    }

    pub fn snapshot(&self) -> TrainSnapshot {
        TrainSnapshot {
            iteration: self.iteration,
            lambda2: if self.iteration == 0 { 0.0 } else { self.current_lambda2() },
            losses: self.losses,
            generator: self.models.generator.params.clone(),
            energy: self.models.energy.params.clone(),
            critic: self.models.critic.params.clone(),
            stein_critic: self.models.stein_critic.as_ref().map(|f| f.params.clone()),
        }
    }

    /// One outer iteration.
    pub fn step(&mut self) -> Result<StepRecord> {
        let lambda1 = self.config.lambda1;
        let lambda2 = self.config.lambda2_at(self.iteration);
        let stein_on = lambda1 > 0.0 || lambda2 > 0.0;

        let mut l_dis = 0.0;
        for _ in 0..self.config.n_d {
            l_dis += self.critic_step()?;
        }
        if self.config.n_d > 0 {
            l_dis /= self.config.n_d as f64;
        }

        let mut l_critic = 0.0;
        if self.models.stein_critic.is_some() && stein_on {
            for _ in 0..self.config.n_c {
                l_critic += self.stein_critic_step(lambda1, lambda2)?;
            }
            if self.config.n_c > 0 {
                l_critic /= self.config.n_c as f64;
            }
        }

        let z = self
            .models
            .generator
            .sample_noise(self.config.batch_size, &mut self.streams.generator_noise);
        let l_est = if stein_on {
            self.estimator_step(lambda1, lambda2, &z)?
        } else {
            0.0
        };
        let l_gen = self.generator_step(lambda2, &z)?;

        let losses = Losses {
            l_dis,
            l_critic,
            l_est,
            l_gen,
        };
        if !losses.all_finite() {
            return Err(Error::NonFinite(format!("losses at iteration {}: {losses:?}", self.iteration)));
        }
        self.losses = losses;
        self.iteration += 1;
        Ok(StepRecord {
            iteration: self.iteration,
            lambda2,
            losses,
        })
    }

    fn critic_step(&mut self) -> Result<f64> {
        let b = self.config.batch_size;
        let x_real = draw_batch(&self.data, b, &mut self.streams.critic_data);
        let z = self.models.generator.sample_noise(b, &mut self.streams.critic_noise);
        let x_fake = self.models.generator.forward(&z)?;
        let critic = &self.models.critic;
        let (value, grad) = match critic.mode {
            CriticMode::Wasserstein => {
                let gp = GpConfig::new(self.config.gp_weight)?;
                let x_hat = if gp.weight > 0.0 {
                    interpolate(&x_real, &x_fake, &mut self.streams.critic_gp)?
                } else {
                    x_real.clone()
                };
                grad_params(&critic.params, Smoothness::PiecewiseConstant, |g, vars| {
                    let xr = g.leaf(x_real);
                    let xf = g.leaf(x_fake);
                    let xh = g.leaf(x_hat);
                    wasserstein_objective_graph(g, critic, vars, xr, xf, xh, gp)
                })?
            }
            CriticMode::Js => grad_params(&critic.params, Smoothness::Strict, |g, vars| {
                let xr = g.leaf(x_real);
                let xf = g.leaf(x_fake);
                let dr = critic.forward_graph(g, vars, xr)?;
                let df = critic.forward_graph(g, vars, xf)?;
                js_disc_objective_graph(g, dr, df)
            })?,
        };
        self.optim.critic.step_ascent(self.models.critic.params.values_mut(), &grad)?;
        Ok(value)
    }

    fn stein_critic_step(&mut self, lambda1: f64, lambda2: f64) -> Result<f64> {
        let b = self.config.batch_size;
        let energy = &self.models.energy;
        let real = if lambda1 > 0.0 {
            let x = draw_batch(&self.data, b, &mut self.streams.stein_data);
            let s = energy.score(&x)?;
            Some((x, s))
        } else {
            None
        };
        let fake = if lambda2 > 0.0 {
            let z = self.models.generator.sample_noise(b, &mut self.streams.stein_noise);
            let x = self.models.generator.forward(&z)?;
            let s = energy.score(&x)?;
            Some((x, s))
        } else {
            None
        };
        let f = self.models.stein_critic.as_ref().expect("neural variant");
        let l2 = self.config.stein_critic_l2;
        let (value, grad) = grad_params(&f.params, Smoothness::Strict, |g, vars| {
            let mut total = None;
            for (weight, batch) in [(lambda1, real), (lambda2, fake)] {
                let Some((x, s)) = batch else { continue };
                let xv = g.leaf(x);
                let sv = g.leaf(s);
                let term = stein_term_graph(g, f, vars, sv, xv)?;
                let mut term = g.scale(term, weight);
                if l2 > 0.0 {
                    let fx = f.forward_graph(g, vars, xv)?;
                    let sq = g.square(fx);
                    let norms = g.sum_cols(sq);
                    let pen = g.mean(norms);
                    let pen = g.scale(pen, l2);
                    term = g.sub(term, pen)?;
                }
                total = add_term(g, total, term)?;
            }
            total.ok_or_else(|| Error::InvalidArgument("Stein critic step with both weights zero".into()))
        })?;
        let opt = self.optim.stein_critic.as_mut().expect("neural variant");
        let f = self.models.stein_critic.as_mut().expect("neural variant");
        opt.step_ascent(f.params.values_mut(), &grad)?;
        Ok(value)
    }

    fn estimator_step(&mut self, lambda1: f64, lambda2: f64, z: &Matrix) -> Result<f64> {
        let b = self.config.batch_size;
        let x_real = if lambda1 > 0.0 {
            Some(draw_batch(&self.data, b, &mut self.streams.estimator_data))
        } else {
            None
        };
        let x_fake = if lambda2 > 0.0 {
            Some(self.models.generator.forward(z)?)
        } else {
            None
        };
        let energy = &self.models.energy;
        let form = self.config.ksd_form;

        let (value, grad) = match &self.models.stein_critic {
            None => {
                let mut terms = Vec::new();
                for (w, x) in [(lambda1, x_real), (lambda2, x_fake)] {
                    if let Some(x) = x {
                        terms.push((w, RbfKernel::median_heuristic(&x)?, x));
                    }
                }
                grad_params(&energy.params, Smoothness::Strict, |g, vars| {
                    let mut total = None;
                    for (w, kernel, x) in terms {
                        let xv = g.leaf(x);
                        let s = energy.score_graph(g, vars, xv)?;
                        let k = ksd_graph(g, s, xv, &kernel, form)?;
                        let term = g.scale(k, w);
                        total = add_term(g, total, term)?;
                    }
                    total.ok_or_else(|| Error::InvalidArgument("estimator step with both weights zero".into()))
                })?
            }
            Some(f) => {
                let mut terms = Vec::new();
                for (w, x) in [(lambda1, x_real), (lambda2, x_fake)] {
                    if let Some(x) = x {
                        terms.push((w, f.value(&x)?, divergence_of_critic(f, &x)?, x));
                    }
                }
                grad_params(&energy.params, Smoothness::Strict, |g, vars| {
                    let mut total = None;
                    for (w, fx, div, x) in terms {
                        let xv = g.leaf(x);
                        let s = energy.score_graph(g, vars, xv)?;
                        let fv = g.leaf(fx);
                        let dv = g.leaf(Matrix::column(&div));
                        let op = stein_operator_graph(g, s, fv, dv)?;
                        let m = g.mean(op);
                        let term = g.scale(m, w);
                        total = add_term(g, total, term)?;
                    }
                    total.ok_or_else(|| Error::InvalidArgument("estimator step with both weights zero".into()))
                })?
            }
        };
        self.optim.energy.step(self.models.energy.params.values_mut(), &grad)?;
        Ok(value)
    }

    fn generator_step(&mut self, lambda2: f64, z: &Matrix) -> Result<f64> {
        let gen = &self.models.generator;
        let critic = &self.models.critic;
        let energy = &self.models.energy;
        let stein = self.models.stein_critic.as_ref();
        let form = self.config.ksd_form;
        // bandwidth is fixed from the current generated batch, not differentiated
        let kernel = if lambda2 > 0.0 && stein.is_none() {
            Some(RbfKernel::median_heuristic(&gen.forward(z)?)?)
        } else {
            None
        };
        let (value, grad) = grad_params(&gen.params, Smoothness::Strict, |g, vars| {
            let zv = g.leaf(z.clone());
            let x = gen.forward_graph(g, vars, zv)?;
            let c_vars = critic.params.to_graph(g);
            let d = critic.forward_graph(g, &c_vars, x)?;
            let base = match critic.mode {
                CriticMode::Wasserstein => {
                    let m = g.mean(d);
                    g.neg(m)
                }
                CriticMode::Js => js_gen_loss_graph(g, d),
            };
            if lambda2 == 0.0 {
                return Ok(base);
            }
            let e_vars = energy.params.to_graph(g);
            let s = energy.score_graph(g, &e_vars, x)?;
            let bridge = match stein {
                None => ksd_graph(g, s, x, kernel.as_ref().expect("kernel set"), form)?,
                Some(f) => {
                    let f_vars = f.params.to_graph(g);
                    stein_term_graph(g, f, &f_vars, s, x)?
                }
            };
            let bridge = g.scale(bridge, lambda2);
            g.add(base, bridge)
        })?;
        self.optim.generator.step(self.models.generator.params.values_mut(), &grad)?;
        Ok(value)
    }

    /// Runs the remaining iterations of the budget, calling `on_step` after each.
    pub fn run<F>(&mut self, mut on_step: F) -> Result<()>
    where
        F: FnMut(&Trainer, &StepRecord) -> Result<()>,
    {
        while self.iteration < self.config.iterations {
            let record = self.step()?;
            on_step(self, &record)?;
        }
        Ok(())
    }

    /// Whether a snapshot is due after `iteration` completed iterations.
    pub fn snapshot_due(&self, iteration: u64) -> bool {
        iteration == 0
            || iteration == self.config.iterations
            || (self.config.eval_every > 0 && iteration % self.config.eval_every == 0)
    }
}

pub struct TrainOutcome {
    pub snapshots: Vec<TrainSnapshot>,
    pub trainer: Trainer,
}

/// Full run: the initial snapshot, one per eval cadence, and the final one.
pub fn train_loop(config: TrainConfig, data: Matrix) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config, data)?;
    let mut snapshots = vec![trainer.snapshot()];
    trainer.run(|t, rec| {
        if t.snapshot_due(rec.iteration) {
            snapshots.push(t.snapshot());
        }
        Ok(())
    })?;
    Ok(TrainOutcome { snapshots, trainer })
}
