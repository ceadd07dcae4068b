//! Standalone reference trainers: WGAN-GP / GAN (generator and critic only)
//! and KSD descent on an energy model (estimator only).
//!
//! They use the same stream labels and initialization as the joint trainer,
//! so switching the Stein terms off there must reproduce these exactly.

use crate::autodiff::{grad_params, AdamState, Smoothness};
use crate::discrepancy::{interpolate, js_disc_objective_graph, js_gen_loss_graph, ksd_graph, wasserstein_objective_graph, GpConfig, KsdForm};
use crate::error::Result;
use crate::models::{CriticMode, EnergyModel, Generator, WassersteinCritic};
use crate::numkit::{Matrix, RbfKernel, RngStream};

use super::{critic_mode, draw_batch, TrainConfig};

pub struct GanBaseline {
    pub generator: Generator,
    pub critic: WassersteinCritic,
    opt_generator: AdamState,
    opt_critic: AdamState,
    data: Matrix,
    n_d: usize,
    batch: usize,
    gp: GpConfig,
    critic_data: RngStream,
    critic_noise: RngStream,
    critic_gp: RngStream,
    generator_noise: RngStream,
}

impl GanBaseline {
    /// Reads `variant` (Wasserstein or JS), `n_d`, batch size, Adam settings,
    /// GP weight, architecture and seed from `config`; the Stein settings are ignored.
    pub fn new(config: &TrainConfig, data: Matrix) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let generator = Generator::init(
            config.arch.generator.clone(),
            config.arch.noise,
            &mut RngStream::derive_from(seed, "init/generator"),
        );
        let critic = WassersteinCritic::init(
            config.arch.critic.clone(),
            critic_mode(config.variant),
            &mut RngStream::derive_from(seed, "init/critic"),
        )?;
        Ok(GanBaseline {
            opt_generator: AdamState::new(config.adam_implicit, generator.params.len()),
            opt_critic: AdamState::new(config.adam_implicit, critic.params.len()),
            generator,
            critic,
            data,
            n_d: config.n_d,
            batch: config.batch_size,
            gp: GpConfig::new(config.gp_weight)?,
            critic_data: RngStream::derive_from(seed, "critic/data"),
            critic_noise: RngStream::derive_from(seed, "critic/noise"),
            critic_gp: RngStream::derive_from(seed, "critic/gp"),
            generator_noise: RngStream::derive_from(seed, "generator/noise"),
        })
    }

    /// One iteration; returns the mean critic objective and the generator loss.
    pub fn step(&mut self) -> Result<(f64, f64)> {
        let mut l_dis = 0.0;
        for _ in 0..self.n_d {
            let x_real = draw_batch(&self.data, self.batch, &mut self.critic_data);
            let z = self.generator.sample_noise(self.batch, &mut self.critic_noise);
            let x_fake = self.generator.forward(&z)?;
            let critic = &self.critic;
            let (value, grad) = match critic.mode {
                CriticMode::Wasserstein => {
                    let gp = self.gp;
                    let x_hat = if gp.weight > 0.0 {
                        interpolate(&x_real, &x_fake, &mut self.critic_gp)?
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
            self.opt_critic.step_ascent(self.critic.params.values_mut(), &grad)?;
            l_dis += value;
        }
        if self.n_d > 0 {
            l_dis /= self.n_d as f64;
        }

        let z = self.generator.sample_noise(self.batch, &mut self.generator_noise);
        let generator = &self.generator;
        let critic = &self.critic;
        let (l_gen, grad) = grad_params(&generator.params, Smoothness::Strict, |g, vars| {
            let zv = g.leaf(z);
            let x = generator.forward_graph(g, vars, zv)?;
            let c_vars = critic.params.to_graph(g);
            let d = critic.forward_graph(g, &c_vars, x)?;
            Ok(match critic.mode {
                CriticMode::Wasserstein => {
                    let m = g.mean(d);
                    g.neg(m)
                }
                CriticMode::Js => js_gen_loss_graph(g, d),
            })
        })?;
        self.opt_generator.step(self.generator.params.values_mut(), &grad)?;
        Ok((l_dis, l_gen))
    }
}

/// Energy model fitted by descending the KSD of real batches.
pub struct KsdDemBaseline {
    pub energy: EnergyModel,
    opt: AdamState,
    data: Matrix,
    batch: usize,
    form: KsdForm,
    weight: f64,
    estimator_data: RngStream,
}

impl KsdDemBaseline {
    /// The loss is `λ₁·KSD`, with `λ₁`, batch size, KSD form, explicit Adam
    /// settings, architecture and seed read from `config`.
    pub fn new(config: &TrainConfig, data: Matrix) -> Result<Self> {
        config.validate()?;
        let energy = EnergyModel::init(
            config.arch.energy_feature.clone(),
            config.arch.n_experts,
            &mut RngStream::derive_from(config.seed, "init/energy"),
        )?;
        Ok(KsdDemBaseline {
            opt: AdamState::new(config.adam_explicit, energy.params.len()),
            energy,
            data,
            batch: config.batch_size,
            form: config.ksd_form,
            weight: config.lambda1,
            estimator_data: RngStream::derive_from(config.seed, "estimator/data"),
        })
    }

    pub fn step(&mut self) -> Result<f64> {
        let x = draw_batch(&self.data, self.batch, &mut self.estimator_data);
        let kernel = RbfKernel::median_heuristic(&x)?;
        let energy = &self.energy;
        let (form, weight) = (self.form, self.weight);
        let (loss, grad) = grad_params(&energy.params, Smoothness::Strict, |g, vars| {
            let xv = g.leaf(x);
            let s = energy.score_graph(g, vars, xv)?;
            let k = ksd_graph(g, s, xv, &kernel, form)?;
            Ok(g.scale(k, weight))
        })?;
        self.opt.step(self.energy.params.values_mut(), &grad)?;
        Ok(loss)
    }
}
