use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::QNetwork;
use super::optim::Optimizer;
use super::DqnError;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized training state. Floats are written with round-trip precision, so a reload is
/// bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_digest: String,
    pub step: u64,
    pub episode: u64,
    pub network: QNetwork,
    pub optimizer: Optimizer,
}

impl Checkpoint {
    pub fn new(config_digest: String, step: u64, episode: u64, network: QNetwork, optimizer: Optimizer) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_digest,
            step,
            episode,
            network,
            optimizer,
        }
    }

    /// Rejects a network whose shape does not fit the environment. A different config digest
    /// only logs a warning; the return value says whether the digests agree.
    pub fn check_compatible(&self, state_dim: usize, action_count: usize, config_digest: &str) -> Result<bool, DqnError> {
        if self.network.action_count != action_count {
            return Err(DqnError::CheckpointMismatch(format!(
                "checkpoint has {} actions, environment has {action_count}",
                self.network.action_count
            )));
        }
        if self.network.state_dim != state_dim {
            return Err(DqnError::CheckpointMismatch(format!(
                "checkpoint expects {} state components, environment has {state_dim}",
                self.network.state_dim
            )));
        }
        let same = self.config_digest == config_digest;
        if !same {
            log::warn!(
                "checkpoint config digest {} differs from the current config {}",
                self.config_digest,
                config_digest
            );
        }
        Ok(same)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), DqnError> {
    let err = |message: String| DqnError::Checkpoint {
        path: path.display().to_string(),
        message,
    };
    let json = serde_json::to_string(ckpt).map_err(|e| err(e.to_string()))?;
    std::fs::write(path, json).map_err(|e| err(e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, DqnError> {
    let err = |message: String| DqnError::Checkpoint {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| err(format!("not valid JSON: {e}")))?;
    let found = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| err("missing version field".into()))? as u32;
    if found != CHECKPOINT_VERSION {
        return Err(DqnError::CheckpointVersion {
            found,
            expected: CHECKPOINT_VERSION,
        });
    }
    let ckpt: Checkpoint = serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
    if ckpt.network.mlp.output_dim() != ckpt.network.action_count
        || ckpt.network.mlp.input_dim() != ckpt.network.state_dim + 1
    {
        return Err(err("network layer shapes disagree with the recorded dimensions".into()));
    }
    if !ckpt.optimizer.m.is_empty() && ckpt.optimizer.m.len() != ckpt.network.mlp.params().len() {
        return Err(err("optimizer moments do not match the network size".into()));
    }
    Ok(ckpt)
}
