//! Versioned JSON checkpoint of a trained model. Floats are written in
//! shortest round-trip form, so save/load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GlobalParams, TrainConfig};
use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::longitudinal::LocalState;

pub const CHECKPOINT_FORMAT: &str = "survgp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalEntry {
    pub id: u64,
    pub state: LocalState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub n_signals: usize,
    pub covariate_names: Vec<String>,
    pub standardizer: Standardizer,
    pub global: GlobalParams,
    pub locals: Vec<LocalEntry>,
    pub iterations: usize,
    pub converged: bool,
}

impl Checkpoint {
    pub fn new(
        config: TrainConfig,
        n_signals: usize,
        covariate_names: Vec<String>,
        standardizer: Standardizer,
        global: GlobalParams,
        locals: Vec<LocalEntry>,
        iterations: usize,
        converged: bool,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config,
            n_signals,
            covariate_names,
            standardizer,
            global,
            locals,
            iterations,
            converged,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let format = value.get("format").and_then(|v| v.as_str()).unwrap_or("");
        if format != CHECKPOINT_FORMAT {
            return Err(Error::Validation(format!("not a model checkpoint (format `{format}`)")));
        }
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != CHECKPOINT_VERSION {
            return Err(Error::SchemaVersion { expected: CHECKPOINT_VERSION, found: version });
        }
        let ck: Checkpoint = serde_json::from_value(value)?;
        ck.global.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
