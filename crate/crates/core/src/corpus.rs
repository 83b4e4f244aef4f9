//! Records, tokenization, vocabulary, label binarization and fold planning.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::math::fnv1a;
use crate::{Error, Result};

/// The nine identity columns of the Civil Comments annotations.
pub const CIVIL_IDENTITIES: [&str; 9] = [
    "male",
    "female",
    "homosexual_gay_or_lesbian",
    "christian",
    "jewish",
    "muslim",
    "black",
    "white",
    "psychiatric_or_mental_illness",
];

pub const CIVIL_SUBTYPES: [&str; 5] = [
    "severe_toxicity",
    "obscene",
    "threat",
    "identity_attack",
    "insult",
];

/// Scores at or above this value count as positive, for toxicity and for
/// identity membership alike.
pub const POSITIVE_THRESHOLD: f64 = 0.5;

pub const DEFAULT_MAX_LEN: usize = 220;
pub const DEFAULT_IDENTITY_WEIGHT: f64 = 3.0;

/// Names of the identity and subtype label columns a corpus carries.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub identities: Vec<String>,
    pub subtypes: Vec<String>,
}

impl LabelSchema {
    pub fn new(identities: Vec<String>, subtypes: Vec<String>) -> Self {
        LabelSchema { identities, subtypes }
    }

    pub fn civil_comments() -> Self {
        LabelSchema {
            identities: CIVIL_IDENTITIES.iter().map(|s| s.to_string()).collect(),
            subtypes: CIVIL_SUBTYPES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn identity_index(&self, name: &str) -> Option<usize> {
        self.identities.iter().position(|n| n == name)
    }

    pub fn subtype_index(&self, name: &str) -> Option<usize> {
        self.subtypes.iter().position(|n| n == name)
    }
}

impl Default for LabelSchema {
    fn default() -> Self {
        Self::civil_comments()
    }
}

/// One row of input data before tokenization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub comment_text: String,
    pub target: f64,
    /// `None` when the row carries no identity annotation at all, which is
    /// different from every identity scoring zero.
    pub identity_scores: Option<BTreeMap<String, f64>>,
    pub subtype_scores: BTreeMap<String, f64>,
}

impl RawRecord {
    pub fn validate(&self, schema: &LabelSchema) -> Result<()> {
        check_unit("target", self.target)?;
        if let Some(ids) = &self.identity_scores {
            for (name, v) in ids {
                if schema.identity_index(name).is_none() {
                    return Err(Error::InvalidArgument(format!("unknown identity {name:?}")));
                }
                check_unit(name, *v)?;
            }
        }
        for (name, v) in &self.subtype_scores {
            if schema.subtype_index(name).is_none() {
                return Err(Error::InvalidArgument(format!("unknown subtype {name:?}")));
            }
            check_unit(name, *v)?;
        }
        Ok(())
    }
}

fn check_unit(field: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{field} = {v} is outside [0, 1]")))
    }
}

/// Whitespace tokenizer that first blanks out a configurable punctuation set.
/// Case is preserved.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub punctuation: Vec<char>,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer {
            punctuation: alloc::vec!['.', ',', '!', '?', ';', ':', '"', '(', ')'],
        }
    }
}

impl Tokenizer {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let cleaned: String = text
            .chars()
            .map(|c| if self.punctuation.contains(&c) { ' ' } else { c })
            .collect();
        cleaned.split_whitespace().map(str::to_string).collect()
    }
}

/// Tokenizes with the default punctuation set.
pub fn tokenize(text: &str) -> Vec<String> {
    Tokenizer::default().tokenize(text)
}

pub const PAD_INDEX: u32 = 0;
pub const UNK_INDEX: u32 = 1;
const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Token ↔ index map. Index 0 is padding and index 1 the unknown token;
/// real tokens start at 2.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary {
            tokens: alloc::vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
            index: BTreeMap::new(),
        }
    }
}

impl Vocabulary {
    /// Builds a vocabulary from tokenized documents. Tokens are ordered by
    /// descending frequency, ties broken lexicographically, so the result does
    /// not depend on document order. `max_size` caps the number of real tokens.
    pub fn build<'a, I, D>(docs: I, min_freq: usize, max_size: Option<usize>) -> Self
    where
        I: IntoIterator<Item = D>,
        D: IntoIterator<Item = &'a String>,
    {
        let mut counts: BTreeMap<&'a str, usize> = BTreeMap::new();
        for doc in docs {
            for tok in doc {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, n)| *n >= min_freq.max(1) && *t != PAD_TOKEN && *t != UNK_TOKEN)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        if let Some(cap) = max_size {
            ranked.truncate(cap);
        }
        let mut vocab = Vocabulary::default();
        for (tok, _) in ranked {
            vocab.push(tok.to_string());
        }
        vocab
    }

    pub fn from_tokens<I: IntoIterator<Item = S>, S: Into<String>>(tokens: I) -> Self {
        let mut vocab = Vocabulary::default();
        for t in tokens {
            let t = t.into();
            if !vocab.index.contains_key(&t) && t != PAD_TOKEN && t != UNK_TOKEN {
                vocab.push(t);
            }
        }
        vocab
    }

    fn push(&mut self, tok: String) {
        let idx = self.tokens.len() as u32;
        self.index.insert(tok.clone(), idx);
        self.tokens.push(tok);
    }

    /// Number of indices, including the two reserved ones.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: u32) -> Option<&str> {
        self.tokens.get(index as usize).map(String::as_str)
    }

    /// Real tokens (index ≥ 2) in index order.
    pub fn tokens(&self) -> impl Iterator<Item = (u32, &str)> {
        self.tokens.iter().enumerate().skip(2).map(|(i, t)| (i as u32, t.as_str()))
    }

    /// Maps tokens to indices, truncating to the first `max_len` and
    /// right-padding with [`PAD_INDEX`]. Returns the ids and the unpadded length.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S], max_len: usize) -> (Vec<u32>, usize) {
        let mut ids = alloc::vec![PAD_INDEX; max_len];
        let n = tokens.len().min(max_len);
        for (slot, tok) in ids.iter_mut().zip(tokens) {
            *slot = self.get(tok.as_ref()).unwrap_or(UNK_INDEX);
        }
        (ids, n)
    }

    /// `token<TAB>index` per line, sorted by index, newline-terminated.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            out.push_str(t);
            out.push('\t');
            out.push_str(&i.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut vocab = Vocabulary { tokens: Vec::new(), index: BTreeMap::new() };
        for (lineno, line) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let (tok, idx) = line.rsplit_once('\t').ok_or_else(|| Error::Parse {
                line: line_no,
                message: "expected token<TAB>index".into(),
            })?;
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad index {idx:?}"),
            })?;
            if idx != lineno {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("index {idx} out of sequence, expected {lineno}"),
                });
            }
            let reserved = match idx {
                0 => Some(PAD_TOKEN),
                1 => Some(UNK_TOKEN),
                _ => None,
            };
            match reserved {
                Some(r) if tok != r => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("index {idx} is reserved for {r}"),
                    })
                }
                Some(_) => vocab.tokens.push(tok.to_string()),
                None => {
                    if vocab.index.contains_key(tok) || tok == PAD_TOKEN || tok == UNK_TOKEN {
                        return Err(Error::Parse {
                            line: line_no,
                            message: format!("duplicate token {tok:?}"),
                        });
                    }
                    vocab.push(tok.to_string());
                }
            }
        }
        if vocab.tokens.len() < 2 {
            return Err(Error::Parse { line: vocab.tokens.len() + 1, message: "missing reserved entries".into() });
        }
        Ok(vocab)
    }

    /// FNV-1a over the TSV serialization.
    pub fn checksum(&self) -> u64 {
        fnv1a(self.to_tsv().into_bytes())
    }
}

/// Targets the auxiliary heads are trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AuxTask {
    /// Single-task toxicity model, no auxiliary heads.
    None,
    #[default]
    Identities,
    Subtypes,
}

/// A tokenized, padded and labelled example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comment {
    pub id: String,
    pub token_ids: Vec<u32>,
    pub true_length: usize,
    /// Soft toxicity label.
    pub y: f64,
    pub y_bin: bool,
    /// Soft identity labels, aligned with [`LabelSchema::identities`].
    pub identity_labels: Vec<f64>,
    pub subtype_labels: Vec<f64>,
    pub identity_present: bool,
    pub beta: f64,
    /// Identity labels were absent in the source and still hold zeros.
    pub needs_propagation: bool,
    /// Identity labels were filled in by the propagation model.
    pub propagated: bool,
}

impl Comment {
    pub fn max_len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn aux_targets(&self, task: AuxTask) -> &[f64] {
        match task {
            AuxTask::None => &[],
            AuxTask::Identities => &self.identity_labels,
            AuxTask::Subtypes => &self.subtype_labels,
        }
    }

    /// Recomputes `identity_present` and `beta` from the current identity labels.
    pub fn reweight(&mut self, c: f64) {
        self.identity_present = self.identity_labels.iter().any(|&v| v >= POSITIVE_THRESHOLD);
        self.beta = example_weight(self.y_bin, self.identity_present, c);
    }

    /// Names of identities whose label is at or above `threshold`.
    pub fn memberships<'a>(&'a self, schema: &'a LabelSchema, threshold: f64) -> impl Iterator<Item = &'a str> + 'a {
        schema
            .identities
            .iter()
            .zip(&self.identity_labels)
            .filter(move |(_, &v)| v >= threshold)
            .map(|(n, _)| n.as_str())
    }
}

/// `c` for non-toxic comments that mention an identity, otherwise 1.
pub fn example_weight(y_bin: bool, identity_present: bool, c: f64) -> f64 {
    if !y_bin && identity_present {
        c
    } else {
        1.0
    }
}

/// Binarized labels and example weight derived from a [`RawRecord`].
#[derive(Clone, Debug, PartialEq)]
pub struct Labels {
    pub y: f64,
    pub y_bin: bool,
    pub identity_labels: Vec<f64>,
    pub subtype_labels: Vec<f64>,
    pub identity_present: bool,
    pub beta: f64,
    pub needs_propagation: bool,
}

pub fn binarize_and_weight(record: &RawRecord, schema: &LabelSchema, c: f64) -> Result<Labels> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("identity weight c must be > 0, got {c}")));
    }
    record.validate(schema)?;
    let y_bin = record.target >= POSITIVE_THRESHOLD;
    let (identity_labels, needs_propagation) = match &record.identity_scores {
        Some(scores) => (
            schema.identities.iter().map(|n| scores.get(n).copied().unwrap_or(0.0)).collect(),
            false,
        ),
        None => (alloc::vec![0.0; schema.identities.len()], true),
    };
    let subtype_labels = schema
        .subtypes
        .iter()
        .map(|n| record.subtype_scores.get(n).copied().unwrap_or(0.0))
        .collect();
    let identity_present = identity_labels.iter().any(|&v: &f64| v >= POSITIVE_THRESHOLD);
    Ok(Labels {
        y: record.target,
        y_bin,
        beta: example_weight(y_bin, identity_present, c),
        identity_labels,
        subtype_labels,
        identity_present,
        needs_propagation,
    })
}

/// Everything needed to turn [`RawRecord`]s into [`Comment`]s.
#[derive(Clone, Debug)]
pub struct Preprocessor {
    pub tokenizer: Tokenizer,
    pub vocab: Vocabulary,
    pub schema: LabelSchema,
    pub max_len: usize,
    pub c: f64,
}

impl Preprocessor {
    /// Builds the vocabulary from `records` (min frequency `min_freq`, at most
    /// `max_size` tokens besides the reserved ones).
    pub fn fit(
        records: &[RawRecord],
        tokenizer: Tokenizer,
        schema: LabelSchema,
        max_len: usize,
        c: f64,
        min_freq: usize,
        max_size: Option<usize>,
    ) -> Self {
        let docs: Vec<Vec<String>> = records.iter().map(|r| tokenizer.tokenize(&r.comment_text)).collect();
        let vocab = Vocabulary::build(docs.iter(), min_freq, max_size);
        Preprocessor { tokenizer, vocab, schema, max_len, c }
    }

    pub fn comments(&self, records: &[RawRecord]) -> Result<Vec<Comment>> {
        records.iter().map(|r| self.comment(r)).collect()
    }

    pub fn comment(&self, record: &RawRecord) -> Result<Comment> {
        if self.max_len == 0 {
            return Err(Error::InvalidArgument("max_len must be at least 1".into()));
        }
        let labels = binarize_and_weight(record, &self.schema, self.c)?;
        let tokens = self.tokenizer.tokenize(&record.comment_text);
        let (token_ids, true_length) = self.vocab.encode(&tokens, self.max_len);
        Ok(Comment {
            id: record.id.clone(),
            token_ids,
            true_length,
            y: labels.y,
            y_bin: labels.y_bin,
            identity_labels: labels.identity_labels,
            subtype_labels: labels.subtype_labels,
            identity_present: labels.identity_present,
            beta: labels.beta,
            needs_propagation: labels.needs_propagation,
            propagated: false,
        })
    }
}

/// A K-fold partition of `0..n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n: usize,
    pub k_folds: usize,
    pub seed: u64,
    /// Validation indices per fold, each sorted ascending.
    pub validation: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn validation(&self, fold: usize) -> &[usize] {
        &self.validation[fold]
    }

    /// Complement of the fold's validation set, ascending.
    pub fn train(&self, fold: usize) -> Vec<usize> {
        let mut in_val = alloc::vec![false; self.n];
        for &i in &self.validation[fold] {
            in_val[i] = true;
        }
        (0..self.n).filter(|&i| !in_val[i]).collect()
    }
}

/// Shuffles `0..n` with a seeded ChaCha stream and deals indices round-robin
/// into `k_folds` validation sets, so sizes differ by at most one.
pub fn make_folds(n: usize, k_folds: usize, seed: u64) -> Result<FoldPlan> {
    if k_folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k_folds}")));
    }
    if n < k_folds {
        return Err(Error::TooFewRecords { n, folds: k_folds });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut validation = alloc::vec![Vec::with_capacity(n / k_folds + 1); k_folds];
    for (pos, idx) in order.into_iter().enumerate() {
        validation[pos % k_folds].push(idx);
    }
    for fold in &mut validation {
        fold.sort_unstable();
    }
    Ok(FoldPlan { n, k_folds, seed, validation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn strings(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenize_strips_punctuation_keeps_case() {
        assert_eq!(tokenize("I am gay."), strings(&["I", "am", "gay"]));
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("Hello, World! It's fine"),
            strings(&["Hello", "World", "It's", "fine"])
        );
    }

    #[test]
    fn custom_punctuation_set() {
        let t = Tokenizer { punctuation: vec!['\''] };
        assert_eq!(t.tokenize("It's, fine"), strings(&["It", "s,", "fine"]));
    }

    #[test]
    fn encode_pads_and_truncates() {
        let vocab = Vocabulary::from_tokens(["a", "b", "c"]);
        let (ids, n) = vocab.encode(&["a", "b", "c"], 5);
        assert_eq!(ids, vec![2, 3, 4, 0, 0]);
        assert_eq!(n, 3);

        let long: Vec<&str> = (0..300).map(|i| if i % 2 == 0 { "a" } else { "b" }).collect();
        let (ids, n) = vocab.encode(&long, 220);
        assert_eq!(ids.len(), 220);
        assert_eq!(n, 220);
        assert_eq!(ids[219], 3);

        let (ids, _) = vocab.encode(&["a", "zzz"], 3);
        assert_eq!(ids, vec![2, UNK_INDEX, PAD_INDEX]);
    }

    #[test]
    fn vocab_build_is_frequency_ranked() {
        let docs = [strings(&["x", "y", "y"]), strings(&["z", "y", "x", "<pad>"])];
        let v = Vocabulary::build(docs.iter(), 1, None);
        assert_eq!(v.get("y"), Some(2));
        assert_eq!(v.get("x"), Some(3));
        assert_eq!(v.get("z"), Some(4));
        assert_eq!(v.get("<pad>"), None);
        let capped = Vocabulary::build(docs.iter(), 2, Some(1));
        assert_eq!(capped.len(), 3);
    }

    #[test]
    fn vocab_tsv_rejects_bad_input() {
        assert!(Vocabulary::from_tsv("<pad>\t0\n<unk>\t1\na\t3\n").is_err());
        assert!(Vocabulary::from_tsv("a\t0\n").is_err());
        assert!(Vocabulary::from_tsv("<pad>\t0\n<unk>\t1\na\t2\na\t3\n").is_err());
        let v = Vocabulary::from_tsv("<pad>\t0\n<unk>\t1\na b\t2\n").unwrap();
        assert_eq!(v.get("a b"), Some(2));
    }

    fn record(target: f64, ids: Option<&[(&str, f64)]>) -> RawRecord {
        RawRecord {
            id: "r".into(),
            comment_text: "text".into(),
            target,
            identity_scores: ids.map(|xs| xs.iter().map(|(k, v)| (k.to_string(), *v)).collect()),
            subtype_scores: BTreeMap::new(),
        }
    }

    #[test]
    fn identity_weighting() {
        let schema = LabelSchema::civil_comments();
        let gay = "homosexual_gay_or_lesbian";
        let l = binarize_and_weight(&record(0.2, Some(&[(gay, 0.8)])), &schema, 3.0).unwrap();
        assert_eq!(l.beta, 3.0);
        let l = binarize_and_weight(&record(0.9, Some(&[(gay, 0.8)])), &schema, 3.0).unwrap();
        assert_eq!(l.beta, 1.0);
        let l = binarize_and_weight(&record(0.2, Some(&[(gay, 0.4), ("male", 0.1)])), &schema, 3.0).unwrap();
        assert_eq!(l.beta, 1.0);
        assert!(!l.identity_present);
    }

    #[test]
    fn binarize_threshold_is_exact() {
        let schema = LabelSchema::civil_comments();
        assert!(binarize_and_weight(&record(0.5, None), &schema, 3.0).unwrap().y_bin);
        assert!(!binarize_and_weight(&record(0.5 - f64::EPSILON, None), &schema, 3.0).unwrap().y_bin);
    }

    #[test]
    fn absent_identities_need_propagation() {
        let schema = LabelSchema::civil_comments();
        let l = binarize_and_weight(&record(0.1, None), &schema, 3.0).unwrap();
        assert!(l.needs_propagation);
        assert!(!l.identity_present);
        assert_eq!(l.beta, 1.0);
        assert_eq!(l.identity_labels, vec![0.0; 9]);
    }

    #[test]
    fn invalid_records_rejected() {
        let schema = LabelSchema::civil_comments();
        assert!(binarize_and_weight(&record(1.5, None), &schema, 3.0).is_err());
        assert!(binarize_and_weight(&record(0.5, Some(&[("martian", 0.2)])), &schema, 3.0).is_err());
        assert!(binarize_and_weight(&record(0.5, None), &schema, 0.0).is_err());
    }

    #[test]
    fn fold_sizes() {
        let plan = make_folds(10, 5, 7).unwrap();
        assert!(plan.validation.iter().all(|f| f.len() == 2));
        let plan = make_folds(11, 5, 7).unwrap();
        let mut sizes: Vec<usize> = plan.validation.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
        assert_eq!(make_folds(11, 5, 7).unwrap(), plan);
        assert_eq!(plan.train(0).len() + plan.validation(0).len(), 11);
        assert!(make_folds(3, 5, 0).is_err());
        assert!(make_folds(3, 1, 0).is_err());
    }
}
