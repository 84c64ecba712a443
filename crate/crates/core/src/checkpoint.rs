//! Versioned JSON container for a trained model.
//!
//! Floats are written with shortest round-trip formatting and parsed with
//! exact rounding, so `from_json(to_json(c)) == c` bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::continual::{Strategy, TrainTrace};
use crate::error::{Error, Result};
use crate::nn::{ModelSpec, ParamVector};

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub params: ParamVector,
    pub strategy: Strategy,
    pub seed: u64,
    pub trained_on: Vec<String>,
    pub trace: TrainTrace,
}

impl Checkpoint {
    pub fn new(
        spec: ModelSpec,
        params: ParamVector,
        strategy: Strategy,
        seed: u64,
        trained_on: Vec<String>,
        trace: TrainTrace,
    ) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT,
            spec,
            params,
            strategy,
            seed,
            trained_on,
            trace,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CHECKPOINT_FORMAT {
            return Err(Error::Validation(format!(
                "unsupported checkpoint format {} (expected {CHECKPOINT_FORMAT})",
                self.format_version
            )));
        }
        self.spec
            .validate()
            .map_err(|e| Error::Validation(format!("bad model spec: {e}")))?;
        if self.params.len() != self.spec.param_count() {
            return Err(Error::Validation(format!(
                "checkpoint holds {} parameters, model needs {}",
                self.params.len(),
                self.spec.param_count()
            )));
        }
        if self.params.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("checkpoint holds non-finite parameters".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)
            .map_err(|e| Error::Validation(format!("unreadable checkpoint: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
