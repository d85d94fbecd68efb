//! Checkpoint files: a JSON header followed by the flat parameter arrays.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::gaussian::{PolicyParams, ValueParams};
use super::mlp::{Layout, MlpParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub layout: Layout,
    pub value_layout: Layout,
    pub step: u64,
    pub lambda: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub policy: Vec<f64>,
    pub value: Vec<f64>,
}

impl Checkpoint {
    pub fn new(policy: &PolicyParams, value: &ValueParams, step: u64, lambda: f64, seed: u64) -> Self {
        Self {
            header: CheckpointHeader {
                layout: policy.layout().clone(),
                value_layout: value.0.layout.clone(),
                step,
                lambda,
                seed,
            },
            policy: policy.flat().to_vec(),
            value: value.0.flat.clone(),
        }
    }

    pub fn policy(&self) -> Result<PolicyParams> {
        PolicyParams::new(MlpParams::from_flat(self.header.layout.clone(), self.policy.clone())?)
    }

    pub fn value(&self) -> Result<ValueParams> {
        Ok(ValueParams(MlpParams::from_flat(self.header.value_layout.clone(), self.value.clone())?))
    }

    pub fn to_json(&self) -> Result<String> {
        if self.policy.iter().chain(&self.value).any(|x| !x.is_finite()) {
            return Err(Error::Numeric("refusing to checkpoint non-finite parameters".into()));
        }
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(text)?;
        ckpt.policy()?;
        ckpt.value()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
