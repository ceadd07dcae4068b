//! `data`: samples a benchmark into `train.csv`, `heldout.csv` and `dataset.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use stein_bridge::numkit::{Matrix, RngStream};
use stein_bridge::synthdata::{add_noise, subsample, two_circle_mixture, two_spiral_mixture, GaussianMixture};

use crate::config::{config_hash, DataConfig, DatasetKind, DatasetSpec};
use crate::output::{read_points, write_json, write_points, Meta};
use crate::CliError;

pub const TRAIN_FILE: &str = "train.csv";
pub const HELDOUT_FILE: &str = "heldout.csv";
pub const DATASET_FILE: &str = "dataset.json";

pub fn mixture(kind: DatasetKind) -> GaussianMixture {
    match kind {
        DatasetKind::TwoCircle => two_circle_mixture(),
        DatasetKind::TwoSpiral => two_spiral_mixture(),
    }
}

/// Training and held-out sets. Streams: `data/train`, `data/subsample`,
/// `data/noise`, `data/heldout`.
pub fn build(spec: &DatasetSpec, seed: u64) -> Result<(Matrix, Matrix), CliError> {
    if spec.n == 0 || spec.heldout == 0 {
        return Err(CliError::Config("dataset sizes must be positive".into()));
    }
    let m = mixture(spec.kind);
    let mut x = m.sample(spec.n, &mut RngStream::derive_from(seed, "data/train"))?;
    if let Some(k) = spec.subsample {
        x = subsample(&x, k, &mut RngStream::derive_from(seed, "data/subsample"))?;
    }
    if spec.noise > 0 {
        x = add_noise(&x, spec.noise, spec.noise_covariance, &mut RngStream::derive_from(seed, "data/noise"))?;
    }
    let held = m.sample(spec.heldout, &mut RngStream::derive_from(seed, "data/heldout"))?;
    Ok((x, held))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub config: DataConfig,
    pub n_train: usize,
    pub n_heldout: usize,
}

pub fn cmd_data(config: &DataConfig) -> Result<(), CliError> {
    let meta = Meta::new("data", config_hash(config), config.seed);
    let (x, held) = build(&config.dataset, config.seed)?;
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_points(&dir.join(TRAIN_FILE), &meta, &x)?;
    write_points(&dir.join(HELDOUT_FILE), &meta, &held)?;
    write_json(
        &dir.join(DATASET_FILE),
        &meta,
        &DatasetRecord {
            config: config.clone(),
            n_train: x.rows(),
            n_heldout: held.rows(),
        },
    )?;
    eprintln!("wrote {} training and {} held-out points to {}", x.rows(), held.rows(), dir.display());
    Ok(())
}

pub struct LoadedDataset {
    pub record: DatasetRecord,
    pub truth: GaussianMixture,
    pub train: Matrix,
    pub heldout: Matrix,
}

pub fn load(dir: &Path) -> Result<LoadedDataset, CliError> {
    let path = dir.join(DATASET_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(obj) = value.as_object_mut() {
        obj.remove("meta");
    }
    let record: DatasetRecord =
        serde_json::from_value(value).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let train = read_points(&dir.join(TRAIN_FILE))?;
    let heldout = read_points(&dir.join(HELDOUT_FILE))?;
    if train.rows() != record.n_train || heldout.rows() != record.n_heldout {
        return Err(CliError::Config(format!("{} does not match its point files", path.display())));
    }
    Ok(LoadedDataset {
        truth: mixture(record.config.dataset.kind),
        record,
        train,
        heldout,
    })
}
