//! Self-describing model files: format tag, model kind, horizon,
//! hyperparameters, standardization statistics and all parameters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{HorizonConfig, Standardizer};
use crate::error::{Error, Result};
use crate::models::ModelKind;
use crate::pipeline::{ModelSettings, TrainedModel};

pub const CHECKPOINT_FORMAT: &str = "lanepred-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub horizon: HorizonConfig,
    /// Seed of the train/eval split the model was fit on.
    pub split_seed: u64,
    pub settings: ModelSettings,
    pub standardizer: Standardizer,
    pub model: TrainedModel,
}

impl Checkpoint {
    pub fn new(horizon: HorizonConfig, split_seed: u64, settings: ModelSettings, standardizer: Standardizer, model: TrainedModel) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            horizon,
            split_seed,
            settings,
            standardizer,
            model,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.model.kind()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer(&mut out, self).map_err(|e| Error::io(path, e.into()))?;
        out.write_all(b"\n").and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported format '{}' (expected '{CHECKPOINT_FORMAT}')",
                path.display(),
                ck.format
            )));
        }
        if !ck.standardizer.is_finite() {
            return Err(Error::Checkpoint(format!("{}: non-finite standardizer", path.display())));
        }
        Ok(ck)
    }
}
