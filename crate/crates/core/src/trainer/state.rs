//! Full trainer state on disk: models, optimizer moments and stream positions,
//! enough to continue a run bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Losses, Models, Optimizers, Streams, TrainConfig, Trainer};
use crate::autodiff::Checkpoint;
use crate::error::{Error, Result};
use crate::models::{EnergyModel, Generator, SteinCriticNet, WassersteinCritic};
use crate::numkit::Matrix;

pub const TRAIN_STATE_FORMAT: &str = "stein-bridge-train-state";
pub const TRAIN_STATE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamPosition {
    pub label: String,
    pub position: u128,
}

/// SHA-256 over the shape and the bit patterns of a data matrix.
pub fn data_digest(data: &Matrix) -> String {
    let mut h = Sha256::new();
    h.update((data.rows() as u64).to_le_bytes());
    h.update((data.cols() as u64).to_le_bytes());
    for v in data.data() {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCheckpoint {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub iteration: u64,
    pub losses: Losses,
    /// Digest of the training set the run was started on.
    pub data_digest: String,
    pub generator: Checkpoint,
    pub energy: Checkpoint,
    pub critic: Checkpoint,
    pub stein_critic: Option<Checkpoint>,
    pub optim: Optimizers,
    pub streams: Vec<StreamPosition>,
}

impl TrainCheckpoint {
    pub fn capture(trainer: &Trainer) -> Self {
        let m = &trainer.models;
        TrainCheckpoint {
            format: TRAIN_STATE_FORMAT.into(),
            version: TRAIN_STATE_VERSION,
            config: trainer.config().clone(),
            iteration: trainer.iteration(),
            losses: trainer.losses(),
            data_digest: data_digest(trainer.data()),
            generator: m.generator.to_checkpoint(),
            energy: m.energy.to_checkpoint(),
            critic: m.critic.to_checkpoint(),
            stein_critic: m.stein_critic.as_ref().map(|f| f.to_checkpoint()),
            optim: trainer.optim.clone(),
            streams: trainer.streams.positions(),
        }
    }

    /// Rebuilds the trainer; `data` must be the training set the run started on.
    pub fn restore(&self, data: Matrix) -> Result<Trainer> {
        if self.format != TRAIN_STATE_FORMAT || self.version != TRAIN_STATE_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported train state {:?} v{}",
                self.format, self.version
            )));
        }
        if data_digest(&data) != self.data_digest {
            return Err(Error::Checkpoint("training data differs from the one the run started on".into()));
        }
        let models = Models {
            generator: Generator::from_checkpoint(&self.generator)?,
            energy: EnergyModel::from_checkpoint(&self.energy)?,
            critic: WassersteinCritic::from_checkpoint(&self.critic)?,
            stein_critic: self.stein_critic.as_ref().map(SteinCriticNet::from_checkpoint).transpose()?,
        };
        if models.stein_critic.is_some() == self.config.variant.uses_kernel()
            || models.stein_critic.is_some() != self.optim.stein_critic.is_some()
        {
            return Err(Error::Checkpoint("Stein critic presence does not match the variant".into()));
        }
        let sizes = [
            (models.generator.params.len(), self.optim.generator.m.len()),
            (models.energy.params.len(), self.optim.energy.m.len()),
            (models.critic.params.len(), self.optim.critic.m.len()),
        ];
        if sizes.iter().any(|(a, b)| a != b) {
            return Err(Error::Checkpoint("optimizer state does not match the parameters".into()));
        }
        let streams = Streams::restore(self.config.seed, &self.streams)?;
        Trainer::from_parts(
            self.config.clone(),
            data,
            models,
            self.optim.clone(),
            streams,
            self.iteration,
            self.losses,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::tests::{small_config, small_data};
    use crate::trainer::Variant;

    #[test]
    fn resume_continues_bit_exactly() {
        for variant in [Variant::WKsd, Variant::JsSteinNet] {
            let config = small_config(variant, 6, 11);
            let mut full = Trainer::new(config.clone(), small_data(6)).unwrap();
            full.run(|_, _| Ok(())).unwrap();

            let mut first = Trainer::new(config, small_data(6)).unwrap();
            for _ in 0..3 {
                first.step().unwrap();
            }
            let text = TrainCheckpoint::capture(&first).to_json().unwrap();
            let mut resumed = TrainCheckpoint::from_json(&text).unwrap().restore(small_data(6)).unwrap();
            assert_eq!(resumed.iteration(), 3);
            resumed.run(|_, _| Ok(())).unwrap();
            assert_eq!(resumed.snapshot(), full.snapshot());
            assert_eq!(resumed.optim, full.optim);
        }
    }

    #[test]
    fn rejects_other_data() {
        let t = Trainer::new(small_config(Variant::WKsd, 1, 1), small_data(1)).unwrap();
        let ck = TrainCheckpoint::capture(&t);
        assert!(ck.restore(small_data(2)).is_err());
        assert!(ck.restore(small_data(1)).is_ok());
    }
}
