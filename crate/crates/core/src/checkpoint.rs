//! Single-file JSON checkpoint. Holds the trainable parameters, the full
//! optimizer state and the run config; the frozen encoder is referenced by
//! descriptor and fingerprint only.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{DualEncoder, EncoderSpec, StubEncoder};
use crate::error::{Error, Result};
use crate::experiment::RunConfig;
use crate::report::CheckpointKind;
use crate::train::TrainState;

pub const CHECKPOINT_FORMAT: &str = "agiqa-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub backbone: String,
    pub encoder: EncoderSpec,
    pub encoder_fingerprint: String,
    pub config_hash: String,
    #[serde(default)]
    pub kind: CheckpointKind,
    /// Raw label range the model's [0, 1] outputs map back to.
    pub label_range: (f64, f64),
    pub category_words: Vec<String>,
    pub run: RunConfig,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn new<E: DualEncoder>(
        run: &RunConfig,
        label_range: (f64, f64),
        state: TrainState,
        enc: &E,
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            backbone: enc.backbone_id().to_string(),
            encoder: run.encoder.clone(),
            encoder_fingerprint: enc.fingerprint(),
            config_hash: run.config_hash(),
            kind: CheckpointKind::Last,
            label_range,
            category_words: state.model.categories.words().to_vec(),
            run: run.clone(),
            state,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, json).map_err(|source| Error::UnwritablePath {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref())?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format {:?}", ckpt.format)));
        }
        if ckpt.category_words != ckpt.state.model.categories.words() {
            return Err(Error::Checkpoint("category words disagree with the model".into()));
        }
        Ok(ckpt)
    }

    /// Fails unless `enc` is bit-for-bit the encoder the checkpoint was
    /// trained against.
    pub fn verify_encoder<E: DualEncoder>(&self, enc: &E) -> Result<()> {
        let actual = enc.fingerprint();
        if actual != self.encoder_fingerprint {
            return Err(Error::EncoderFingerprint {
                expected: self.encoder_fingerprint.clone(),
                actual,
            });
        }
        Ok(())
    }

    /// Rebuilds the frozen encoder from its descriptor and validates it.
    pub fn encoder(&self) -> Result<StubEncoder> {
        let enc = self.encoder.build()?;
        self.verify_encoder(&enc)?;
        Ok(enc)
    }
}
