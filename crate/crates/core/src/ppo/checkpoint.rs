use serde::{Deserialize, Serialize};

use super::{Adam, IterationStats, PolicyParams, TrainConfig, Trainer};
use crate::error::{Error, Result};

const FORMAT: &str = "memrl-checkpoint";
const VERSION: u32 = 1;

/// Everything needed to evaluate a policy or resume its training.
///
/// Stored as JSON; floats are written in shortest round-trip form and read
/// back exactly, so save/load is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub video_id: String,
    pub video_length: usize,
    pub iteration: usize,
    pub config: TrainConfig,
    pub params: PolicyParams,
    pub adam: Adam,
    pub history: Vec<IterationStats>,
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer, video_id: impl Into<String>) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            video_id: video_id.into(),
            video_length: trainer.params.input_width(),
            iteration: trainer.iteration,
            config: trainer.config.clone(),
            params: trainer.params.clone(),
            adam: trainer.adam.clone(),
            history: trainer.history.clone(),
        }
    }

    pub fn into_trainer(self) -> Trainer {
        Trainer {
            config: self.config,
            params: self.params,
            adam: self.adam,
            iteration: self.iteration,
            history: self.history,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format != FORMAT || ckpt.version != VERSION {
            return Err(Error::Parse(format!(
                "unsupported checkpoint {} v{} (expected {FORMAT} v{VERSION})",
                ckpt.format, ckpt.version
            )));
        }
        ckpt.config.validate()?;
        if ckpt.params.input_width() != ckpt.video_length {
            return Err(Error::invariant(format!(
                "checkpoint input width {} differs from video length {}",
                ckpt.params.input_width(),
                ckpt.video_length
            )));
        }
        Ok(ckpt)
    }
}
