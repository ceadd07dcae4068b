//! Run configuration: one TOML file per run, `key.path=value` overrides on
//! top, then typed parsing that rejects unknown keys.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stein_bridge::convlab::{BridgeOrder, PhiCurvature, ZooSpec};
use stein_bridge::trainer::{EvalSpec, TrainConfig};

use crate::CliError;

/// Reads the TOML file (if any) and applies overrides in order.
pub fn load_table(path: Option<&Path>, overrides: &[String]) -> Result<toml::Table, CliError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    Ok(table)
}

/// `a.b.c=value`; the value is read as a TOML literal and falls back to a string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {spec:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key {key:?}")));
    }
    let value = parse_literal(raw.trim());
    set_path(table, &path, value)
}

fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

pub fn set_path(table: &mut toml::Table, path: &[&str], value: toml::Value) -> Result<(), CliError> {
    let (last, parents) = path.split_last().expect("nonempty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("{p} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

pub fn parse<T: DeserializeOwned>(table: toml::Table) -> Result<T, CliError> {
    T::deserialize(toml::Value::Table(table)).map_err(|e| CliError::Config(e.to_string()))
}

/// SHA-256 of the canonical JSON form of the resolved configuration.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let text = serde_json::to_string(config).expect("configs serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    TwoCircle,
    TwoSpiral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Points drawn from the mixture.
    pub n: usize,
    /// Held-out points for evaluation.
    #[serde(default = "default_heldout")]
    pub heldout: usize,
    /// Keep only this many of the `n` points.
    #[serde(default)]
    pub subsample: Option<usize>,
    /// Injected noise points.
    #[serde(default)]
    pub noise: usize,
    #[serde(default = "default_noise_cov")]
    pub noise_covariance: f64,
}

fn default_heldout() -> usize {
    2000
}

fn default_noise_cov() -> f64 {
    stein_bridge::synthdata::NOISE_COVARIANCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Generator, energy model and critics trained together.
    #[default]
    Joint,
    /// WGAN-GP or GAN alone.
    Gan,
    /// Energy model alone by KSD descent.
    KsdDem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    /// Directory written by `data`.
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub mode: TrainMode,
    pub train: TrainConfig,
    /// Defaults to the preset of the dataset kind.
    #[serde(default)]
    pub eval: Option<EvalSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRunConfig {
    pub dataset: PathBuf,
    /// Train state written by `train`; required unless `oracle`.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Score the true mixture as sampler and estimator instead of a checkpoint.
    #[serde(default)]
    pub oracle: bool,
    pub seed: u64,
    pub out: PathBuf,
    #[serde(default)]
    pub eval: Option<EvalSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Prop1,
    Zoo,
    Thm4,
    Thm3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Prop1Spec {
    pub etas: Vec<f64>,
    pub starts: usize,
    pub steps: usize,
    pub order: BridgeOrder,
}

impl Default for Prop1Spec {
    fn default() -> Self {
        Prop1Spec {
            etas: (1..=9).map(|i| i as f64 / 10.0).collect(),
            starts: 10,
            steps: 10_000,
            order: BridgeOrder::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thm4Spec {
    pub instances: usize,
    pub max_rank: usize,
    pub s_min: f64,
    pub s_max: f64,
    pub alpha: f64,
    pub curvature: PhiCurvature,
    /// `η = eta_scale / σ_max` per instance.
    pub eta_scale: f64,
    pub steps: usize,
    /// Steps compared against the per-coordinate reduction.
    pub reduction_steps: usize,
}

impl Default for Thm4Spec {
    fn default() -> Self {
        Thm4Spec {
            instances: 20,
            max_rank: 5,
            s_min: 0.5,
            s_max: 2.0,
            alpha: 1.0,
            curvature: PhiCurvature::default(),
            eta_scale: 0.5,
            steps: 100_000,
            reduction_steps: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thm3Spec {
    pub instances: usize,
    pub dim: usize,
    pub mu: f64,
    pub iterations: usize,
}

impl Default for Thm3Spec {
    fn default() -> Self {
        Thm3Spec {
            instances: 10,
            dim: 3,
            mu: 1.0,
            iterations: 200,
        }
    }
}

fn all_checks() -> Vec<Check> {
    vec![Check::Prop1, Check::Zoo, Check::Thm4, Check::Thm3]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default = "all_checks")]
    pub checks: Vec<Check>,
    #[serde(default)]
    pub prop1: Prop1Spec,
    #[serde(default)]
    pub zoo: ZooSpec,
    #[serde(default)]
    pub thm4: Thm4Spec,
    #[serde(default)]
    pub thm3: Thm3Spec,
}
