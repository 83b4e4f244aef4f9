//! Frozen word-embedding table built from two pre-trained sources.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Vocabulary, PAD_INDEX};
use crate::math::fnv1a;
use crate::{Error, Result};

pub type VectorMap = BTreeMap<String, Vec<f64>>;

/// Half-width of the uniform range used for words missing from a source.
pub const OOV_RANGE: f64 = 0.05;

/// `|V| x (d1 + d2)` row-major matrix; row `i` embeds vocabulary index `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub d1: usize,
    pub d2: usize,
    rows: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn from_rows(d1: usize, d2: usize, rows: usize, data: Vec<f64>) -> Result<Self> {
        let dim = d1 + d2;
        if data.len() != rows * dim {
            return Err(Error::ShapeMismatch { what: "embedding data", expected: rows * dim, found: data.len() });
        }
        if rows == 0 {
            return Err(Error::InvalidArgument("embedding table needs at least the padding row".into()));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite { layer: "embedding", timestep: None });
        }
        if data[..dim].iter().any(|&x| x != 0.0) {
            return Err(Error::InvalidArgument("padding row must be zero".into()));
        }
        Ok(EmbeddingTable { d1, d2, rows, data })
    }

    pub fn dim(&self) -> usize {
        self.d1 + self.d2
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn row(&self, id: u32) -> Result<&[f64]> {
        let i = id as usize;
        if i >= self.rows {
            return Err(Error::TokenOutOfRange { id, vocab_len: self.rows });
        }
        let d = self.dim();
        Ok(&self.data[i * d..(i + 1) * d])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Gathers one row per id into a `len(ids) x D` row-major buffer.
    pub fn lookup(&self, token_ids: &[u32]) -> Result<Vec<f64>> {
        let d = self.dim();
        let mut out = Vec::with_capacity(token_ids.len() * d);
        for &id in token_ids {
            out.extend_from_slice(self.row(id)?);
        }
        Ok(out)
    }

    /// Bit-level checksum, used to show training leaves the table untouched.
    pub fn checksum(&self) -> u64 {
        fnv1a(self.data.iter().flat_map(|x| x.to_bits().to_le_bytes()))
    }
}

/// Concatenates `src1` and `src2` vectors for every vocabulary entry. A word
/// missing from a source gets a seeded `Uniform(-0.05, 0.05)` vector in that
/// source's slice. The padding row is zeroed last.
pub fn build_table(
    vocab: &Vocabulary,
    src1: &VectorMap,
    d1: usize,
    src2: &VectorMap,
    d2: usize,
    oov_seed: u64,
) -> Result<EmbeddingTable> {
    for (src, d) in [(src1, d1), (src2, d2)] {
        if let Some((w, v)) = src.iter().find(|(_, v)| v.len() != d) {
            return Err(Error::InvalidArgument(format!(
                "vector for {w:?} has {} entries, expected {d}",
                v.len()
            )));
        }
    }
    let dim = d1 + d2;
    let rows = vocab.len();
    let mut data = alloc::vec![0.0; rows * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(oov_seed);
    for (idx, row) in data.chunks_exact_mut(dim).enumerate() {
        let token = vocab.token(idx as u32).unwrap_or_default();
        let (left, right) = row.split_at_mut(d1);
        for (src, slice) in [(src1, left), (src2, right)] {
            match src.get(token) {
                Some(v) => slice.copy_from_slice(v),
                None => slice.iter_mut().for_each(|x| *x = rng.gen_range(-OOV_RANGE..OOV_RANGE)),
            }
        }
    }
    let pad = PAD_INDEX as usize * dim;
    data[pad..pad + dim].iter_mut().for_each(|x| *x = 0.0);
    EmbeddingTable::from_rows(d1, d2, rows, data)
}
