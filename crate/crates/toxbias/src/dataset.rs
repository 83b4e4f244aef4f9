//! The tokenized dataset written by `prep` and the vocabulary file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toxbias_core::corpus::{Comment, LabelSchema, Tokenizer, Vocabulary};

use crate::fsutil::{read_json, write_atomic, write_json};
use crate::{Error, Result};

pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreparedDataset {
    pub format_version: u32,
    pub schema: LabelSchema,
    pub tokenizer: Tokenizer,
    pub max_len: usize,
    /// `c` used for the stored `beta` values.
    pub identity_weight: f64,
    pub vocab_checksum: u64,
    /// SHA-256 of the raw input file.
    pub source_sha256: String,
    pub comments: Vec<Comment>,
}

impl PreparedDataset {
    pub fn load(path: &Path) -> Result<Self> {
        let d: PreparedDataset = read_json(path)?;
        if d.format_version != DATASET_VERSION {
            return Err(Error::Incompatible(format!(
                "{}: dataset format version {} is not supported (expected {DATASET_VERSION})",
                path.display(),
                d.format_version
            )));
        }
        Ok(d)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Fails with a compatibility error unless `vocab` is the vocabulary the
    /// comments were encoded with.
    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        let found = vocab.checksum();
        if found != self.vocab_checksum {
            return Err(toxbias_core::Error::VocabChecksumMismatch { expected: self.vocab_checksum, found }.into());
        }
        Ok(())
    }
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    Vocabulary::from_tsv(&text).map_err(|e| match e {
        toxbias_core::Error::Parse { line, message } => Error::Line { path: path.into(), line, message },
        other => Error::format(path, other.to_string()),
    })
}

pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    write_atomic(path, vocab.to_tsv().as_bytes())
}
