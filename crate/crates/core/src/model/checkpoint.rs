//! Versioned JSON weight checkpoints.
//!
//! Values are written with shortest round-trip formatting and parsed with
//! exact float parsing, so a save/load cycle is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Discriminator, Generator, ModelConfig};
use crate::autodiff::ParamSet;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "aligan-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub generator: ParamSet,
    pub discriminator: ParamSet,
}

impl Checkpoint {
    pub fn new(gen: &Generator, disc: &Discriminator) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model: gen.config().clone(),
            generator: gen.params().clone(),
            discriminator: disc.params().clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                msg: format!(
                    "expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
                    ckpt.format, ckpt.version
                ),
            });
        }
        Ok(ckpt)
    }

    pub fn into_models(self) -> Result<(Generator, Discriminator)> {
        Ok((
            Generator::from_params(&self.model, self.generator)?,
            Discriminator::from_params(&self.model, self.discriminator)?,
        ))
    }
}
