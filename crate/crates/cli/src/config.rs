//! JSON run configuration.

use std::path::Path;

use regiondroso::datasets::DatasetSpec;
use regiondroso::{EnsembleConfig, PartitionPlan};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Every field is optional in the file; missing ones take the defaults of
/// [`EnsembleConfig`]. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grids: PartitionPlan,
    pub z_per_region: usize,
    pub k_votes: usize,
    pub d_hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub master_seed: u64,
    pub dataset: Option<DatasetSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let e = EnsembleConfig::default();
        RunConfig {
            grids: e.grids,
            z_per_region: e.z_per_region,
            k_votes: e.k_votes,
            d_hidden: e.d_hidden,
            epochs: e.epochs,
            learning_rate: e.learning_rate,
            master_seed: e.master_seed,
            dataset: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let config = match path {
            None => RunConfig::default(),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::input(format!("invalid config {}: {e}", path.display())))?
            }
        };
        config.ensemble()?;
        Ok(config)
    }

    pub fn ensemble(&self) -> Result<EnsembleConfig, CliError> {
        let e = EnsembleConfig {
            grids: self.grids.clone(),
            z_per_region: self.z_per_region,
            k_votes: self.k_votes,
            d_hidden: self.d_hidden,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            master_seed: self.master_seed,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn dataset(&self) -> Result<&DatasetSpec, CliError> {
        self.dataset
            .as_ref()
            .ok_or_else(|| CliError::input("the config has no \"dataset\" section"))
    }
}
