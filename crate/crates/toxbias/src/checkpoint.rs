//! Versioned JSON checkpoints. Floats are written in shortest round-trip
//! form and parsed with correct rounding, so save → load is exact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toxbias_core::corpus::{AuxTask, LabelSchema, Tokenizer};
use toxbias_core::embed::EmbeddingTable;
use toxbias_core::nn::{Hyper, Model, ModelParams};

use crate::fsutil::{read_json, write_json};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub hyper: Hyper,
    pub aux_task: AuxTask,
    pub schema: LabelSchema,
    pub tokenizer: Tokenizer,
    pub max_len: usize,
    pub vocab_checksum: u64,
    pub alpha: f64,
    pub fold: usize,
    pub params: ModelParams,
    pub embedding: EmbeddingTable,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = read_json(path)?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Incompatible(format!(
                "{}: checkpoint format version {} is not supported (expected {CHECKPOINT_VERSION})",
                path.display(),
                ck.format_version
            )));
        }
        let bad = |e: toxbias_core::Error| Error::format(path, e.to_string());
        ck.hyper.validate().map_err(bad)?;
        ModelParams::zeros(&ck.hyper).check_same_shape(&ck.params).map_err(bad)?;
        if ck.params.hyper != ck.hyper {
            return Err(Error::format(path, "parameter hyperparameters differ from the checkpoint header"));
        }
        let t = &ck.embedding;
        EmbeddingTable::from_rows(t.d1, t.d2, t.rows(), t.as_slice().to_vec()).map_err(bad)?;
        if t.dim() != ck.hyper.embed_dim {
            return Err(Error::format(path, "embedding width differs from the model input width"));
        }
        if !ck.params.is_finite() {
            return Err(toxbias_core::Error::NonFinite { layer: "checkpoint", timestep: None }.into());
        }
        Ok(ck)
    }

    pub fn model(&self) -> Model {
        Model { params: self.params.clone(), embedding: self.embedding.clone(), vocab_checksum: self.vocab_checksum }
    }
}
