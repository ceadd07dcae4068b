//! `train`: joint training or one of the two baselines, with a per-iteration
//! loss log, metrics at the evaluation cadence, and resumable train states.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use stein_bridge::autodiff::Checkpoint;
use stein_bridge::metrics::MetricReport;
use stein_bridge::trainer::{
    EvalSpec, Evaluator, GanBaseline, KsdDemBaseline, Losses, TrainCheckpoint, TrainConfig, Trainer,
};

use crate::config::{config_hash, DatasetKind, TrainMode, TrainRunConfig};
use crate::data::{load, LoadedDataset};
use crate::output::{fmt_f64, fmt_opt, write_json, CsvOut, Meta};
use crate::CliError;

pub const LOG_FILE: &str = "log.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const STATE_FILE: &str = "state.json";
pub const RUN_FILE: &str = "run.json";
pub const ABORT_FILE: &str = "abort.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

pub const LOG_HEADER: [&str; 7] = ["iteration", "l_dis", "l_critic", "l_est", "l_gen", "lambda2", "wall_clock_s"];
pub const METRICS_HEADER: [&str; 6] = ["iteration", "mmd", "hsr", "kld", "jsd", "auc"];

/// Train-state file: `meta` plus the resumable state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateFile {
    pub state: TrainCheckpoint,
}

pub fn read_state(path: &Path) -> Result<TrainCheckpoint, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let state = value
        .get_mut("state")
        .map(serde_json::Value::take)
        .ok_or_else(|| CliError::Config(format!("{} holds no train state", path.display())))?;
    serde_json::from_value(state).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn eval_spec(dataset: &LoadedDataset, explicit: Option<&EvalSpec>) -> EvalSpec {
    match explicit {
        Some(s) => s.clone(),
        None => match dataset.record.config.dataset.kind {
            DatasetKind::TwoCircle => EvalSpec::two_circle(&dataset.truth),
            DatasetKind::TwoSpiral => EvalSpec::two_spiral(&dataset.truth),
        },
    }
}

fn due(config: &TrainConfig, iteration: u64) -> bool {
    iteration == 0
        || iteration == config.iterations
        || (config.eval_every > 0 && iteration % config.eval_every == 0)
}

struct Logs {
    log: CsvOut,
    metrics: CsvOut,
    start: Instant,
    wall_clock: bool,
}

impl Logs {
    fn open(dir: &Path, meta: &Meta, wall_clock: bool) -> Result<Self, CliError> {
        Ok(Logs {
            log: CsvOut::create(&dir.join(LOG_FILE), meta, &LOG_HEADER)?,
            metrics: CsvOut::create(&dir.join(METRICS_FILE), meta, &METRICS_HEADER)?,
            start: Instant::now(),
            wall_clock,
        })
    }

    fn step(&mut self, iteration: u64, l: &Losses, lambda2: f64) -> Result<(), CliError> {
        let wall = self.wall_clock.then(|| self.start.elapsed().as_secs_f64());
        self.log.row([
            iteration.to_string(),
            fmt_f64(l.l_dis),
            fmt_f64(l.l_critic),
            fmt_f64(l.l_est),
            fmt_f64(l.l_gen),
            fmt_f64(lambda2),
            fmt_opt(wall),
        ])
    }

    fn metrics(&mut self, iteration: u64, sample: Option<(f64, f64)>, density: Option<(f64, f64, f64)>) -> Result<(), CliError> {
        self.metrics.row([
            iteration.to_string(),
            fmt_opt(sample.map(|s| s.0)),
            fmt_opt(sample.map(|s| s.1)),
            fmt_opt(density.map(|d| d.0)),
            fmt_opt(density.map(|d| d.1)),
            fmt_opt(density.map(|d| d.2)),
        ])
    }

    fn finish(self) -> Result<(), CliError> {
        self.log.finish()?;
        self.metrics.finish()
    }
}

#[derive(Debug, Serialize)]
struct RunSummary<'a> {
    config: &'a TrainRunConfig,
    resumed_from: Option<u64>,
    final_iteration: u64,
    final_losses: Losses,
    final_metrics: Option<MetricReport>,
}

#[derive(Debug, Serialize)]
struct AbortDump<'a> {
    error: String,
    state: &'a TrainCheckpoint,
}

pub fn cmd_train(config: &TrainRunConfig, resume: Option<&Path>) -> Result<(), CliError> {
    config.train.validate()?;
    let meta = Meta::new("train", config_hash(config), config.train.seed);
    let dataset = load(&config.dataset)?;
    let spec = eval_spec(&dataset, config.eval.as_ref());
    let evaluator = Evaluator::new(dataset.truth.clone(), dataset.heldout.clone(), spec, config.train.seed)?;
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    if resume.is_some() && config.mode != TrainMode::Joint {
        return Err(CliError::Config("only joint runs can be resumed".into()));
    }
    let mut logs = Logs::open(dir, &meta, config.train.log_wall_clock)?;
    let summary = match config.mode {
        TrainMode::Joint => run_joint(config, &meta, dataset, &evaluator, resume, &mut logs),
        TrainMode::Gan => run_gan(config, &meta, dataset, &evaluator, &mut logs),
        TrainMode::KsdDem => run_ksd_dem(config, &meta, dataset, &evaluator, &mut logs),
    };
    logs.finish()?;
    let (final_iteration, final_losses, final_metrics, resumed_from) = summary?;
    write_json(
        &dir.join(RUN_FILE),
        &meta,
        &RunSummary {
            config,
            resumed_from,
            final_iteration,
            final_losses,
            final_metrics,
        },
    )?;
    eprintln!("finished {final_iteration} iterations in {}", dir.display());
    Ok(())
}

type Summary = (u64, Losses, Option<MetricReport>, Option<u64>);

fn report(sample: Option<(f64, f64)>, density: Option<(f64, f64, f64)>) -> Option<MetricReport> {
    let (mmd, hsr) = sample.unwrap_or((f64::NAN, f64::NAN));
    let (kld, jsd, auc) = density.unwrap_or((f64::NAN, f64::NAN, f64::NAN));
    Some(MetricReport { mmd, hsr, kld, jsd, auc })
}

fn run_joint(
    config: &TrainRunConfig,
    meta: &Meta,
    dataset: LoadedDataset,
    evaluator: &Evaluator,
    resume: Option<&Path>,
    logs: &mut Logs,
) -> Result<Summary, CliError> {
    let dir = &config.out_dir;
    let mut trainer = match resume {
        Some(path) => {
            let ck = read_state(path)?;
            if ck.config != config.train {
                return Err(CliError::Config(format!(
                    "{} was written with a different train configuration",
                    path.display()
                )));
            }
            ck.restore(dataset.train)?
        }
        None => Trainer::new(config.train.clone(), dataset.train)?,
    };
    let resumed_from = resume.map(|_| trainer.iteration());
    let mut last_metrics = None;
    let mut evaluate = |t: &Trainer, logs: &mut Logs| -> Result<(), CliError> {
        let it = t.iteration();
        let sample = evaluator.sample_metrics(&t.models.generator, it)?;
        let density = evaluator.density_metrics(&t.models.energy, it)?;
        logs.metrics(it, Some(sample), Some(density))?;
        last_metrics = report(Some(sample), Some(density));
        Ok(())
    };
    if trainer.iteration() == 0 {
        evaluate(&trainer, logs)?;
    }
    if config.train.checkpoint_every > 0 {
        let ck_dir = dir.join(CHECKPOINT_DIR);
        std::fs::create_dir_all(&ck_dir).map_err(|e| CliError::io(&ck_dir, e))?;
    }
    while trainer.iteration() < config.train.iterations {
        let rec = match trainer.step() {
            Ok(r) => r,
            Err(e) => {
                let state = TrainCheckpoint::capture(&trainer);
                write_json(
                    &dir.join(ABORT_FILE),
                    meta,
                    &AbortDump {
                        error: e.to_string(),
                        state: &state,
                    },
                )?;
                return Err(e.into());
            }
        };
        logs.step(rec.iteration, &rec.losses, rec.lambda2)?;
        if due(&config.train, rec.iteration) {
            evaluate(&trainer, logs)?;
        }
        let every = config.train.checkpoint_every;
        if every > 0 && rec.iteration % every == 0 {
            write_state(&checkpoint_path(dir, rec.iteration), meta, &trainer)?;
        }
    }
    write_state(&dir.join(STATE_FILE), meta, &trainer)?;
    Ok((trainer.iteration(), trainer.losses(), last_metrics, resumed_from))
}

pub fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(CHECKPOINT_DIR).join(format!("state-{iteration:08}.json"))
}

fn write_state(path: &Path, meta: &Meta, trainer: &Trainer) -> Result<(), CliError> {
    write_json(
        path,
        meta,
        &StateFile {
            state: TrainCheckpoint::capture(trainer),
        },
    )
}

#[derive(Debug, Serialize)]
struct ModelFile<'a> {
    model: &'a Checkpoint,
}

fn finite(l: &Losses, iteration: u64) -> Result<(), CliError> {
    if l.all_finite() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("losses at iteration {iteration}: {l:?}")))
    }
}

fn run_gan(
    config: &TrainRunConfig,
    meta: &Meta,
    dataset: LoadedDataset,
    evaluator: &Evaluator,
    logs: &mut Logs,
) -> Result<Summary, CliError> {
    let mut base = GanBaseline::new(&config.train, dataset.train)?;
    let mut last = None;
    let mut losses = Losses::default();
    for it in 0..=config.train.iterations {
        if it > 0 {
            let (l_dis, l_gen) = base.step()?;
            losses = Losses {
                l_dis,
                l_gen,
                ..Losses::default()
            };
            finite(&losses, it)?;
            logs.step(it, &losses, 0.0)?;
        }
        if due(&config.train, it) {
            let s = evaluator.sample_metrics(&base.generator, it)?;
            logs.metrics(it, Some(s), None)?;
            last = report(Some(s), None);
        }
    }
    let dir = &config.out_dir;
    write_json(&dir.join("generator.json"), meta, &ModelFile { model: &base.generator.to_checkpoint() })?;
    write_json(&dir.join("critic.json"), meta, &ModelFile { model: &base.critic.to_checkpoint() })?;
    Ok((config.train.iterations, losses, last, None))
}

fn run_ksd_dem(
    config: &TrainRunConfig,
    meta: &Meta,
    dataset: LoadedDataset,
    evaluator: &Evaluator,
    logs: &mut Logs,
) -> Result<Summary, CliError> {
    let mut base = KsdDemBaseline::new(&config.train, dataset.train)?;
    let mut last = None;
    let mut losses = Losses::default();
    for it in 0..=config.train.iterations {
        if it > 0 {
            losses = Losses {
                l_est: base.step()?,
                ..Losses::default()
            };
            finite(&losses, it)?;
            logs.step(it, &losses, 0.0)?;
        }
        if due(&config.train, it) {
            let d = evaluator.density_metrics(&base.energy, it)?;
            logs.metrics(it, None, Some(d))?;
            last = report(None, Some(d));
        }
    }
    write_json(&config.out_dir.join("energy.json"), meta, &ModelFile { model: &base.energy.to_checkpoint() })?;
    Ok((config.train.iterations, losses, last, None))
}
