//! JSON checkpoints of a network spec and its parameters.
//!
//! Floats are written with shortest round-trip formatting and parsed with
//! exact round-tripping, so a reloaded network reproduces forward outputs
//! bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{MlpSpec, ParamStore};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "stein-bridge-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Model kind tag, e.g. `generator` or `energy`.
    pub kind: String,
    pub spec: MlpSpec,
    /// Model-specific settings beyond the network (noise prior, critic mode, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(kind: &str, spec: MlpSpec, meta: serde_json::Value, params: ParamStore) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: kind.into(),
            spec,
            meta,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Checks the header and that the parameter layout starts with the network's own.
    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", self.version)));
        }
        let params = ParamStore::from_parts(self.params.layout().to_vec(), self.params.values().to_vec())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let expected = self.spec.layout();
        if params.layout().len() < expected.len() || expected.iter().zip(params.layout()).any(|(a, b)| a != b) {
            return Err(Error::Checkpoint("parameter layout does not match the network spec".into()));
        }
        Ok(())
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(())
    }
}
