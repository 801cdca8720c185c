use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::ParamSet;
use crate::error::{Error, Result};
use crate::io;

use super::{DialogueModel, ModelConfig};

pub const CHECKPOINT_FORMAT: &str = "groupcl-checkpoint/1";

/// Self-describing model container. Floats are written in shortest round-trip
/// form, so a save/load cycle is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub architecture: String,
    pub config: ModelConfig,
    pub vocab_hash: String,
    pub params: ParamSet,
}

pub fn save_checkpoint(path: &Path, model: &DialogueModel, vocab_hash: &str) -> Result<()> {
    let ckpt = Checkpoint {
        format: CHECKPOINT_FORMAT.to_string(),
        architecture: model.config().architecture.to_string(),
        config: *model.config(),
        vocab_hash: vocab_hash.to_string(),
        params: model.params().clone(),
    };
    io::write_file(path, &serde_json::to_vec(&ckpt)?)
}

/// Loads a checkpoint, rejecting it if its vocabulary hash differs from `vocab_hash`.
pub fn load_checkpoint(path: &Path, vocab_hash: &str) -> Result<DialogueModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_slice(&bytes)?;
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(Error::InvalidArgument(format!(
            "{}: unsupported checkpoint format {:?}",
            path.display(),
            ckpt.format
        )));
    }
    if ckpt.vocab_hash != vocab_hash {
        return Err(Error::VocabMismatch {
            expected: vocab_hash.to_string(),
            found: ckpt.vocab_hash,
        });
    }
    DialogueModel::from_params(ckpt.config, ckpt.params)
}
