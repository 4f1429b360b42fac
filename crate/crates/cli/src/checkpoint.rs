//! Versioned JSON container for fitted models.
//!
//! Layout: `format_version`, `site_ids`, `train_seed`, `epochs`, and `model`,
//! which carries a `type` tag (`flow`, `gmmn`, `vine`). Flow models store
//! their configuration, per-layer permutations and the flat raw parameter
//! vector (conditioner weights and biases layer by layer, spline outputs
//! before any activation), plus the PCA basis when present. Generators store
//! layer widths and column-major weights followed by biases per layer. Vines
//! store their trees and one bivariate copula per edge.

use std::path::Path;

use serde::{Deserialize, Serialize};
use teletail::eval::TrainedModel;
use teletail::io::write_atomic;

use crate::error::CliError;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub site_ids: Vec<String>,
    pub train_seed: u64,
    pub epochs: usize,
    pub model: TrainedModel,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String, CliError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let probe: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Checkpoint(format!("not a checkpoint: {e}")))?;
        match probe.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_VERSION as u64 => {}
            Some(v) => {
                return Err(CliError::Checkpoint(format!(
                    "checkpoint format version {v} is not supported (this build reads version {CHECKPOINT_VERSION}); refit the model"
                )))
            }
            None => return Err(CliError::Checkpoint("checkpoint lacks a format_version field".into())),
        }
        let ck: Checkpoint =
            serde_json::from_value(probe).map_err(|e| CliError::Checkpoint(format!("malformed checkpoint: {e}")))?;
        let model = ck.model.validated()?;
        if model.dim() != ck.site_ids.len() {
            return Err(CliError::Checkpoint(format!(
                "model dimension {} does not match {} site ids",
                model.dim(),
                ck.site_ids.len()
            )));
        }
        Ok(Checkpoint { model, ..ck })
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = self.to_json()?;
        write_atomic(path, |w| {
            use std::io::Write;
            w.write_all(text.as_bytes())?;
            Ok(())
        })?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
