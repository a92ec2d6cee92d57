use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DynamicsModel, ModelConfig, ModelKind};
use crate::error::Result;

/// Serialized model: `{kind, config, parameters, seed, epoch}` plus an
/// optional method label used in reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub parameters: Vec<f64>,
    pub seed: u64,
    pub epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Checkpoint {
    pub fn from_model(model: &DynamicsModel, epoch: usize) -> Self {
        Self {
            kind: model.kind(),
            config: model.config().clone(),
            parameters: model.params().to_vec(),
            seed: model.seed(),
            epoch,
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn to_model(&self) -> Result<DynamicsModel> {
        DynamicsModel::from_params(self.kind, self.config.clone(), self.parameters.clone(), self.seed)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string(self)?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
